//! Composite midpoint quadrature. Midpoints never touch interval
//! endpoints, so integrands with a jump at an endpoint (the one-sided
//! kernel indicators) are integrated cleanly by splitting there.

pub fn integrate_midpoint(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let width = (b - a) / panels as f64;
    let mut sum = 0.0;
    for i in 0..panels {
        let x = a + (i as f64 + 0.5) * width;
        sum += f(x);
    }
    sum * width
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn integrates_quadratic() {
        // int_0^1 3x^2 dx = 1
        let v = integrate_midpoint(|x| 3.0 * x * x, 0.0, 1.0, 4096);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-7);
    }
}
