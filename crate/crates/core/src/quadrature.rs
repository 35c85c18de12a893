//! Numerical integration building blocks.
//!
//! Everything analytical in this crate reduces to one of three shapes:
//!
//! * a fixed Gauss–Legendre rule on a finite interval, optionally split into
//!   panels at known non-smooth points ([`GaussLegendre`], [`composite_rule`]);
//! * a tensor product of two such rules weighted by probability densities
//!   (built in [`crate::analysis`]);
//! * an adaptive Gauss–Kronrod (7, 15) integrator for the few one-dimensional
//!   integrals that must be resolved to near machine precision
//!   ([`adaptive_gauss_kronrod`]).

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `n`-point rule by Newton iteration on the Legendre
    /// three-term recurrence. `n` must be at least 1.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi's initial guess for the i-th largest root.
            let mut x = ((4 * i + 3) as f64 * PI / (4.0 * nf + 2.0)).cos()
                * (1.0 - (nf - 1.0) / (8.0 * nf * nf * nf));
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// `P_n(x)` and `P_n'(x)`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Panel order used by [`composite_rule`].
pub const PANEL_ORDER: usize = 8;

/// Composite Gauss–Legendre rule on `[a, b]` with roughly `total_nodes`
/// nodes, split so that every entry of `breakpoints` lying strictly inside
/// the interval falls on a panel boundary.
///
/// Panels use [`PANEL_ORDER`] nodes each; the panel count per segment is
/// proportional to the segment length (at least one per segment).
pub fn composite_rule(a: f64, b: f64, breakpoints: &[f64], total_nodes: usize) -> Vec<(f64, f64)> {
    assert!(b > a, "empty integration interval");
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&c| c > a && c < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);

    let panels_total = total_nodes.div_ceil(PANEL_ORDER).max(edges.len() - 1);
    let rule = GaussLegendre::new(PANEL_ORDER);
    let width = b - a;
    let mut out = Vec::with_capacity(panels_total * PANEL_ORDER);
    for seg in edges.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        let n_panels = (((hi - lo) / width) * panels_total as f64).round().max(1.0) as usize;
        let h = (hi - lo) / n_panels as f64;
        for j in 0..n_panels {
            let pa = lo + h * j as f64;
            let pb = if j + 1 == n_panels { hi } else { pa + h };
            out.extend(rule.mapped(pa, pb));
        }
    }
    out
}

// Gauss–Kronrod (7, 15) abscissae and weights on [-1, 1] (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveResult {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Globally adaptive Gauss–Kronrod (7, 15) integration of `f` over `[a, b]`.
///
/// Bisects the interval with the largest error estimate until the summed
/// estimate drops below `max(abs_tol, rel_tol * |value|)` or `max_intervals`
/// is reached.
pub fn adaptive_gauss_kronrod<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> AdaptiveResult {
    let (v, e) = gk15(&mut f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    loop {
        let value: f64 = intervals.iter().map(|iv| iv.2).sum();
        let error: f64 = intervals.iter().map(|iv| iv.3).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return AdaptiveResult { value, error, converged: true };
        }
        if intervals.len() >= max_intervals {
            return AdaptiveResult { value, error, converged: false };
        }
        let worst = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        for n in [1, 2, 3, 8, 17, 64, 256] {
            let gl = GaussLegendre::new(n);
            let s: f64 = gl.weights().iter().sum();
            assert_relative_eq!(s, 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let gl = GaussLegendre::new(6);
        // Degree 11 is the highest exactly integrated by 6 nodes.
        let v = gl.integrate(0.0, 2.0, |x| x.powi(11) - 3.0 * x.powi(4));
        let exact = 2f64.powi(12) / 12.0 - 3.0 * 2f64.powi(5) / 5.0;
        assert_relative_eq!(v, exact, max_relative = 1e-13);
    }

    #[test]
    fn three_point_rule_matches_closed_form() {
        let gl = GaussLegendre::new(3);
        let r = (0.6f64).sqrt();
        assert_relative_eq!(gl.nodes()[0], -r, epsilon = 1e-15);
        assert_relative_eq!(gl.nodes()[2], r, epsilon = 1e-15);
        assert_relative_eq!(gl.weights()[1], 8.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn composite_rule_respects_breakpoints() {
        let rule = composite_rule(0.0, PI, &[1.0], 64);
        let w: f64 = rule.iter().map(|r| r.1).sum();
        assert_relative_eq!(w, PI, epsilon = 1e-12);
        // |x - 1| has a kink at the breakpoint but is piecewise linear.
        let v: f64 = rule.iter().map(|&(x, w)| w * (x - 1.0).abs()).sum();
        let exact = 0.5 + 0.5 * (PI - 1.0).powi(2);
        assert_relative_eq!(v, exact, epsilon = 1e-12);
    }

    #[test]
    fn adaptive_handles_sharp_features() {
        let r = adaptive_gauss_kronrod(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 0.0, 1e-12, 2000);
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!(r.converged);
        assert_relative_eq!(r.value, exact, max_relative = 1e-11);
    }
}
