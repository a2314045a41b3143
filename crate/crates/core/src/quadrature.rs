//! Numerical integration used by the compensators.

/// 15-point Kronrod nodes on [-1, 1] (non-negative half) and weights. The odd
/// indices are the embedded 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss-Kronrod 7/15 panel: (Kronrod estimate, error estimate).
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]` with global error
/// control. Stops when the summed error estimate is below
/// `max(abs_tol, rel_tol * |I|)` or after `max_panels` panels.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut panels = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > abs_tol.max(rel_tol * total.abs()) && panels.len() < max_panels {
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, pv, pe) = panels.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            panels.push((lo, hi, pv, pe));
            break;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        total += v1 + v2 - pv;
        err += e1 + e2 - pe;
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
    // Re-sum to shed the drift of the running updates.
    panels.iter().map(|p| p.2).sum()
}

/// `∫_0^L e^{-k x} (x + x0)^{-(η+1)} dx` for `x0 > 0`, `k >= 0`, `η > 0`.
///
/// Integrated in `w = ln(1 + x/x0)`, where the integrand becomes
/// `x0^{-η} exp(-η w - k x0 (e^w - 1))`; the range is cut where the exponent
/// passes 50.
pub fn exp_power_integral(k: f64, x0: f64, len: f64, eta: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let kx0 = k * x0;
    let w_max = (len / x0).ln_1p();
    let phi = |w: f64| eta * w + kx0 * w.exp_m1();
    const CUT: f64 = 50.0;
    let mut w_end = w_max;
    if eta > 0.0 {
        w_end = w_end.min(CUT / eta);
    }
    if kx0 > 0.0 {
        w_end = w_end.min((CUT / kx0).ln_1p());
    }
    // phi is convex and increasing, so Newton from the right walks down
    // monotonically onto the cut level.
    if phi(w_end) > CUT + 1.0 {
        for _ in 0..60 {
            let v = phi(w_end);
            if v <= CUT + 1.0 {
                break;
            }
            let d = eta + kx0 * w_end.exp();
            w_end -= (v - CUT) / d;
        }
    }
    let body = integrate(
        |w| (-(eta * w) - kx0 * w.exp_m1()).exp(),
        0.0,
        w_end,
        1e-300,
        1e-13,
        200,
    );
    x0.powf(-eta) * body
}

/// Vector-valued adaptive Gauss-Kronrod. Each component `c` is refined until
/// its error estimate is below `max(abs_tol, rel_tol · ∫|f_c|)`.
pub fn integrate_n<const N: usize, F: FnMut(f64) -> [f64; N]>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> [f64; N] {
    struct Panel<const N: usize> {
        lo: f64,
        hi: f64,
        val: [f64; N],
        abs: [f64; N],
        err: [f64; N],
    }
    let mut panel = |lo: f64, hi: f64| -> Panel<N> {
        let center = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let fc = f(center);
        let mut k = [0.0; N];
        let mut g = [0.0; N];
        let mut ab = [0.0; N];
        for c in 0..N {
            k[c] = fc[c] * WGK[7];
            g[c] = fc[c] * WG[3];
            ab[c] = fc[c].abs() * WGK[7];
        }
        for j in 0..7 {
            let dx = half * XGK[j];
            let l = f(center - dx);
            let r = f(center + dx);
            for c in 0..N {
                k[c] += WGK[j] * (l[c] + r[c]);
                ab[c] += WGK[j] * (l[c].abs() + r[c].abs());
                if j % 2 == 1 {
                    g[c] += WG[j / 2] * (l[c] + r[c]);
                }
            }
        }
        let mut err = [0.0; N];
        for c in 0..N {
            err[c] = ((k[c] - g[c]) * half).abs();
            k[c] *= half;
            ab[c] *= half;
        }
        Panel { lo, hi, val: k, abs: ab, err }
    };
    if b <= a {
        return [0.0; N];
    }
    let mut panels = vec![panel(a, b)];
    loop {
        let mut abs_tot = [0.0; N];
        let mut err_tot = [0.0; N];
        for p in &panels {
            for c in 0..N {
                abs_tot[c] += p.abs[c];
                err_tot[c] += p.err[c];
            }
        }
        let scale: [f64; N] = std::array::from_fn(|c| abs_tol.max(rel_tol * abs_tot[c]));
        if (0..N).all(|c| err_tot[c] <= scale[c]) || panels.len() >= max_panels {
            break;
        }
        let worst = |p: &Panel<N>| (0..N).map(|c| p.err[c] / scale[c].max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| worst(x.1).total_cmp(&worst(y.1)))
            .expect("non-empty");
        let p = panels.swap_remove(idx);
        let mid = 0.5 * (p.lo + p.hi);
        if mid <= p.lo || mid >= p.hi {
            panels.push(p);
            break;
        }
        panels.push(panel(p.lo, mid));
        panels.push(panel(mid, p.hi));
    }
    let mut out = [0.0; N];
    for p in &panels {
        for (o, v) in out.iter_mut().zip(&p.val) {
            *o += v;
        }
    }
    out
}

/// Nodes and weights of `n`-point Gauss-Laguerre quadrature
/// (`∫_0^∞ e^{-s} f(s) ds ≈ Σ w_j f(s_j)`), by Newton iteration on the
/// Laguerre polynomials.
fn gauss_laguerre(n: usize) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(n);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n {
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => z + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                z + (1.0 + 2.55 * ai) / (1.9 * ai) * (z - out[i - 2].0)
            }
        };
        let mut pp = 0.0;
        let mut p2 = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0 - z) * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (p1 - p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z {
                break;
            }
        }
        out.push((z, -1.0 / (pp * nf * p2)));
    }
    out
}

const LAGUERRE_N: usize = 20;

fn laguerre_table() -> &'static [(f64, f64)] {
    static TABLE: std::sync::OnceLock<Vec<(f64, f64)>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| gauss_laguerre(LAGUERRE_N))
}

/// `[J, J_ln, J_x]` with
/// `J = ∫_0^L e^{-k x} (x + x0)^{-(η+1)} dx`, `J_ln` the same integral
/// weighted by `ln(x + x0)` and `J_x` weighted by `x`. These are the
/// excitation part of the main compensator and its derivatives in `η` and
/// `k`.
///
/// When the power factor barely moves over the decay length `1/k`, the
/// exponential is taken as a Gauss-Laguerre weight, splitting `[0, L]` as
/// `[0, ∞) − [L, ∞)`. Otherwise the integrals are done adaptively in
/// `w = ln(1 + x/x0)`.
pub fn exp_power_moments(k: f64, x0: f64, len: f64, eta: f64) -> [f64; 3] {
    if len <= 0.0 {
        return [0.0; 3];
    }
    let p = eta + 1.0;
    let z = k * x0;
    if z >= 12.0 * p.max(2.0) {
        let table = laguerre_table();
        let tail = k * len < 45.0;
        let decay = (-k * len).exp();
        let mut out = [0.0; 3];
        for &(s, w) in table {
            let x = s / k;
            let lu = (x0 + x).ln();
            let g = w * (-p * lu).exp();
            out[0] += g;
            out[1] += g * lu;
            out[2] += g * x;
            if tail {
                let lt = (x0 + len + x).ln();
                let gt = w * decay * (-p * lt).exp();
                out[0] -= gt;
                out[1] -= gt * lt;
                out[2] -= gt * (len + x);
            }
        }
        return out.map(|v| v / k);
    }
    let w_max = (len / x0).ln_1p();
    let phi = |w: f64| eta * w + z * w.exp_m1();
    const CUT: f64 = 50.0;
    let mut w_end = w_max.min(CUT / eta);
    if z > 0.0 {
        w_end = w_end.min((CUT / z).ln_1p());
    }
    if phi(w_end) > CUT + 1.0 {
        for _ in 0..60 {
            let v = phi(w_end);
            if v <= CUT + 1.0 {
                break;
            }
            w_end -= (v - CUT) / (eta + z * w_end.exp());
        }
    }
    let lx0 = x0.ln();
    let [a, b, c] = integrate_n(
        |w| {
            let e = (-(eta * w) - z * w.exp_m1()).exp();
            [e, e * (lx0 + w), e * w.exp_m1()]
        },
        0.0,
        w_end,
        1e-300,
        1e-11,
        200,
    );
    let scale = x0.powf(-eta);
    [scale * a, scale * b, scale * x0 * c]
}

/// `∫_0^L (x + x0)^{-(η+1)} dx` in closed form.
#[inline]
pub fn power_integral(x0: f64, len: f64, eta: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let w = (len / x0).ln_1p();
    x0.powf(-eta) * -(-eta * w).exp_m1() / eta
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_exponential() {
        let v = integrate(|x| x * x, 0.0, 3.0, 1e-14, 1e-14, 50);
        assert!((v - 9.0).abs() < 1e-12);
        let v = integrate(|x| (-x).exp(), 0.0, 40.0, 1e-15, 1e-13, 200);
        assert!((v - (1.0 - (-40.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn power_integral_closed_form() {
        let v = power_integral(0.5, 10.0, 1.5);
        let exact = (0.5f64.powf(-1.5) - 10.5f64.powf(-1.5)) / 1.5;
        assert!((v - exact).abs() < 1e-13 * exact);
    }

    #[test]
    fn exp_power_reduces_to_power_at_zero_rate() {
        for &(x0, len, eta) in &[(0.5, 10.0, 1.5), (1e-3, 100.0, 0.2), (3.0, 0.01, 4.0)] {
            let a = exp_power_integral(0.0, x0, len, eta);
            let b = power_integral(x0, len, eta);
            assert!((a - b).abs() <= 1e-11 * b, "{x0} {len} {eta}: {a} vs {b}");
        }
    }

    #[test]
    fn laguerre_rule_integrates_polynomials() {
        // ∫ e^{-s} s^m ds = m!
        let t = gauss_laguerre(LAGUERRE_N);
        let mut fact = 1.0;
        for m in 0..12 {
            if m > 0 {
                fact *= m as f64;
            }
            let v: f64 = t.iter().map(|(s, w)| w * s.powi(m)).sum();
            assert!((v - fact).abs() < 1e-11 * fact, "m={m}: {v} vs {fact}");
        }
    }

    #[test]
    fn moments_against_reference() {
        for &(k, x0, len, eta) in &[
            (1.0, 0.5, 10.0, 1.5),
            (1.0, 80.0, 3.0, 1.0),
            (1.0, 500.0, 100.0, 1.0),
            (2.5, 40.0, 0.3, 0.5),
            (0.05, 3.0, 1000.0, 3.0),
            (30.0, 1e-3, 0.5, 0.2),
            (1.0, 300.0, 20.0, 60.0),
        ] {
            let got = exp_power_moments(k, x0, len, eta);
            let reference = integrate_n(
                |x: f64| {
                    let g = (-k * x).exp() * (x + x0).powf(-(eta + 1.0));
                    [g, g * (x + x0).ln(), g * x]
                },
                0.0,
                len,
                0.0,
                1e-14,
                4000,
            );
            for c in 0..3 {
                let tol = 1e-9 * reference[c].abs().max(1e-300) + 1e-300;
                assert!(
                    (got[c] - reference[c]).abs() <= tol.max(1e-9 * reference[0] * (x0 + len).ln().abs()),
                    "case {k} {x0} {len} {eta} component {c}: {} vs {}",
                    got[c],
                    reference[c]
                );
            }
            let single = exp_power_integral(k, x0, len, eta);
            assert!((single - got[0]).abs() <= 1e-9 * single);
        }
    }

    #[test]
    fn moments_near_the_laguerre_switch() {
        for eta in [0.05, 0.5, 1.0, 3.0, 20.0, 99.0] {
            let p: f64 = eta + 1.0;
            let z_switch = 12.0 * p.max(2.0);
            for k in [0.01, 1.0, 50.0] {
                for factor in [1.0, 1.5, 4.0] {
                    let x0 = factor * z_switch / k;
                    for len in [0.1 / k, 2.0 / k, 60.0 / k] {
                        let got = exp_power_moments(k, x0, len, eta);
                        let reference = integrate_n(
                            |x: f64| {
                                let g = (-k * x).exp() * (x + x0).powf(-(eta + 1.0));
                                [g, g * (x + x0).ln(), g * x]
                            },
                            0.0,
                            len,
                            0.0,
                            1e-14,
                            4000,
                        );
                        if !(reference[0] > 1e-280) {
                            continue;
                        }
                        for c in 0..3 {
                            let rel = (got[c] - reference[c]).abs() / reference[c].abs();
                            assert!(rel < 1e-10, "eta={eta} k={k} x0={x0} len={len} c={c}: rel {rel}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn exp_power_against_linear_space_quadrature() {
        for &(k, x0, len, eta) in &[
            (1.0, 0.5, 10.0, 1.5),
            (50.0, 0.01, 3.0, 0.3),
            (0.01, 2.0, 500.0, 1.0),
            (3.0, 1e-4, 1.0, 2.0),
        ] {
            let a = exp_power_integral(k, x0, len, eta);
            // Linear-space reference on a geometric grid.
            let mut b = 0.0;
            let mut lo = 0.0;
            let mut width = x0.min(len) * 1e-3;
            while lo < len {
                let hi = (lo + width).min(len);
                b += integrate(
                    |x: f64| (-k * x).exp() * (x + x0).powf(-(eta + 1.0)),
                    lo,
                    hi,
                    0.0,
                    1e-14,
                    100,
                );
                lo = hi;
                width *= 2.0;
            }
            assert!((a - b).abs() <= 1e-10 * b, "k={k}: {a} vs {b}");
        }
    }
}
