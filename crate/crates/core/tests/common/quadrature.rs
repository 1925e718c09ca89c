//! Reference value of the F(1, d2) distribution function by quadrature.
//!
//! With `x = s^2` the density of F(1, d2) turns into the smooth integrand
//! `2 / (sqrt(d2) B(1/2, d2/2)) * (1 + s^2/d2)^(-(d2+1)/2)` on `[0, sqrt(x)]`,
//! integrated with composite Gauss-Legendre. The beta function comes from
//! log-gamma at half-integers, built up by `ln G(z+1) = ln G(z) + ln z`.

/// `ln Gamma(k / 2)` for a positive integer `k`.
pub fn ln_gamma_half(k: u64) -> f64 {
    let (mut z, mut acc) = if k.is_multiple_of(2) { (1.0, 0.0) } else { (0.5, 0.5 * std::f64::consts::PI.ln()) };
    while z < k as f64 / 2.0 {
        acc += z.ln();
        z += 1.0;
    }
    acc
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for m in 2..=n {
                    let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

pub fn f1_cdf_by_quadrature(x: f64, d2: u64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let d = d2 as f64;
    let ln_beta = ln_gamma_half(1) + ln_gamma_half(d2) - ln_gamma_half(d2 + 1);
    let c = 2.0 / (d.sqrt() * ln_beta.exp());
    let upper = x.sqrt();
    let rule = gauss_legendre(16);
    let panels = 400;
    let h = upper / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        let mut part = 0.0;
        for &(node, w) in &rule {
            let s = mid + 0.5 * h * node;
            part += w * (-(d + 1.0) / 2.0 * (s * s / d).ln_1p()).exp();
        }
        total += 0.5 * h * part;
    }
    c * total
}
