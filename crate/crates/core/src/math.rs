// Transcendental functions come from libm so results are identical with and
// without std.
pub(crate) use libm::{ceil, exp, log as ln, pow as powf, sqrt, tanh};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}
