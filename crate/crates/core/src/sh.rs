//! Real spherical harmonics and the confidence-weighted sequential
//! coefficient estimator.
//!
//! Basis convention: orthonormal real harmonics without the Condon-Shortley
//! phase. For `m < 0` the function carries `sin(|m| phi)`, for `m > 0`
//! `cos(m phi)`, with `phi` measured in the xy-plane from +x and the polar
//! axis along +z. So `Y_1^{-1} ∝ y`, `Y_1^0 ∝ z`, `Y_1^1 ∝ x`.
//!
//! Coefficients are kept in canonical order: degree ascending, and within a
//! degree the order runs from `-l` to `l`. The flat position of `(l, m)` is
//! `l*l + l + m`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::{Color, Vec3, MAX_SH_DEGREE};
use crate::observation::Observation;

/// Degree/order pair of one basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SHIndex {
    pub degree: usize,
    pub order: i32,
}

impl SHIndex {
    pub fn new(degree: usize, order: i32) -> Result<Self> {
        if order.unsigned_abs() as usize > degree {
            return Err(Error::InvalidConfig(format!("|m| = {} exceeds l = {degree}", order.abs())));
        }
        Ok(Self { degree, order })
    }

    /// Position in canonical order.
    pub fn flat(self) -> usize {
        ((self.degree * self.degree + self.degree) as i64 + self.order as i64) as usize
    }

    pub fn from_flat(i: usize) -> Self {
        let degree = (i as f64).sqrt().floor() as usize;
        let degree = if (degree + 1) * (degree + 1) <= i { degree + 1 } else { degree };
        Self {
            degree,
            order: i as i32 - (degree * degree + degree) as i32,
        }
    }
}

/// Number of coefficients of a degree-`l` expansion.
pub const fn num_coefficients(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

const C0: f64 = 0.282_094_791_773_878_14; // 1/(2 sqrt(pi))
const C1: f64 = 0.488_602_511_902_919_9; // sqrt(3/(4 pi))
const C2_A: f64 = 1.092_548_430_592_079_2; // sqrt(15/pi)/2
const C2_B: f64 = 0.315_391_565_252_520_05; // sqrt(5/pi)/4
const C2_C: f64 = 0.546_274_215_296_039_6; // sqrt(15/pi)/4
const C3_A: f64 = 0.590_043_589_926_643_5; // sqrt(35/(2 pi))/4
const C3_B: f64 = 2.890_611_442_640_554; // sqrt(105/pi)/2
const C3_C: f64 = 0.457_045_799_464_465_8; // sqrt(21/(2 pi))/4
const C3_D: f64 = 0.373_176_332_590_115_4; // sqrt(7/pi)/4
const C3_E: f64 = 1.445_305_721_320_277; // sqrt(105/pi)/4
const C4_A: f64 = 2.503_342_941_796_704_6; // 3 sqrt(35/pi)/4
const C4_B: f64 = 1.770_130_769_779_930_4; // 3 sqrt(35/(2 pi))/4
const C4_C: f64 = 0.946_174_695_757_560_1; // 3 sqrt(5/pi)/4
const C4_D: f64 = 0.669_046_543_557_289_2; // 3 sqrt(5/(2 pi))/4
const C4_E: f64 = 0.105_785_546_915_204_31; // 3/(16 sqrt(pi))
const C4_F: f64 = 0.473_087_347_878_780_04; // 3 sqrt(5/pi)/8
const C4_G: f64 = 0.625_835_735_449_176_1; // 3 sqrt(35/pi)/16

/// Writes all basis values up to `degree` at unit direction `d` into `out`
/// (canonical order). `out` must hold at least `(degree+1)^2` entries.
pub fn eval_basis(degree: usize, d: Vec3, out: &mut [f64]) {
    debug_assert!(degree <= MAX_SH_DEGREE);
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = C0;
    if degree == 0 {
        return;
    }
    out[1] = C1 * y;
    out[2] = C1 * z;
    out[3] = C1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = C2_A * x * y;
    out[5] = C2_A * y * z;
    out[6] = C2_B * (3.0 * zz - 1.0);
    out[7] = C2_A * x * z;
    out[8] = C2_C * (xx - yy);
    if degree == 2 {
        return;
    }
    out[9] = C3_A * y * (3.0 * xx - yy);
    out[10] = C3_B * x * y * z;
    out[11] = C3_C * y * (5.0 * zz - 1.0);
    out[12] = C3_D * z * (5.0 * zz - 3.0);
    out[13] = C3_C * x * (5.0 * zz - 1.0);
    out[14] = C3_E * z * (xx - yy);
    out[15] = C3_A * x * (xx - 3.0 * yy);
    if degree == 3 {
        return;
    }
    out[16] = C4_A * x * y * (xx - yy);
    out[17] = C4_B * y * z * (3.0 * xx - yy);
    out[18] = C4_C * x * y * (7.0 * zz - 1.0);
    out[19] = C4_D * y * z * (7.0 * zz - 3.0);
    out[20] = C4_E * (35.0 * zz * zz - 30.0 * zz + 3.0);
    out[21] = C4_D * x * z * (7.0 * zz - 3.0);
    out[22] = C4_F * (xx - yy) * (7.0 * zz - 1.0);
    out[23] = C4_B * x * z * (xx - 3.0 * yy);
    out[24] = C4_G * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy));
}

/// Value of one orthonormal real harmonic at unit direction `d`.
pub fn sh_basis(idx: SHIndex, d: Vec3) -> Result<f64> {
    if idx.degree > MAX_SH_DEGREE {
        return Err(Error::UnsupportedDegree(idx.degree));
    }
    let mut buf = [0.0; num_coefficients(MAX_SH_DEGREE)];
    eval_basis(idx.degree, d, &mut buf);
    Ok(buf[idx.flat()])
}

/// Per-channel coefficients of a degree-`L` expansion, canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct SHExpansion {
    max_degree: usize,
    coefficients: Vec<Color>,
}

impl SHExpansion {
    pub fn zeros(max_degree: usize) -> Result<Self> {
        if max_degree > MAX_SH_DEGREE {
            return Err(Error::UnsupportedDegree(max_degree));
        }
        Ok(Self {
            max_degree,
            coefficients: vec![Color::BLACK; num_coefficients(max_degree)],
        })
    }

    pub fn from_coefficients(max_degree: usize, coefficients: Vec<Color>) -> Result<Self> {
        if max_degree > MAX_SH_DEGREE {
            return Err(Error::UnsupportedDegree(max_degree));
        }
        if coefficients.len() != num_coefficients(max_degree) {
            return Err(Error::InvalidConfig(format!(
                "degree {max_degree} needs {} coefficients, got {}",
                num_coefficients(max_degree),
                coefficients.len()
            )));
        }
        Ok(Self {
            max_degree,
            coefficients,
        })
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn coefficients(&self) -> &[Color] {
        &self.coefficients
    }

    pub fn get(&self, idx: SHIndex) -> Option<Color> {
        self.coefficients.get(idx.flat()).copied()
    }
}

/// Reconstructed color `sum h * Y(d)`.
pub fn evaluate(expansion: &SHExpansion, d: Vec3) -> Color {
    let mut basis = [0.0; num_coefficients(MAX_SH_DEGREE)];
    eval_basis(expansion.max_degree, d, &mut basis);
    expansion
        .coefficients
        .iter()
        .zip(basis.iter())
        .fold(Color::BLACK, |acc, (h, y)| acc + *h * *y)
}

/// Plain Monte-Carlo projection `4 pi / K * sum c_k Y(d_k)`, ignoring
/// confidences.
pub fn fit_unweighted(obs: &[Observation], degree: usize) -> Result<SHExpansion> {
    if obs.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let mut out = SHExpansion::zeros(degree)?;
    let n = num_coefficients(degree);
    let mut basis = [0.0; num_coefficients(MAX_SH_DEGREE)];
    for o in obs {
        eval_basis(degree, o.direction, &mut basis);
        for (h, y) in out.coefficients.iter_mut().zip(&basis[..n]) {
            *h += o.color * *y;
        }
    }
    let scale = 4.0 * PI / obs.len() as f64;
    for h in &mut out.coefficients {
        *h = *h * scale;
    }
    Ok(out)
}

/// Output of [`fit_weighted_sequential`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub expansion: SHExpansion,
    /// Final residual color per input observation, in input order.
    pub residuals: Vec<Color>,
    pub effective_degree: usize,
}

/// Largest degree whose coefficient count fits in `count` observations.
pub fn degree_for_count(count: usize, max_degree: usize) -> usize {
    let mut l = 0;
    while l < max_degree && num_coefficients(l + 1) <= count {
        l += 1;
    }
    l
}

/// Confidence-weighted sequential estimator.
///
/// Coefficients are estimated one at a time in canonical order. Each step
/// projects the running residual (observation minus everything
/// reconstructed so far) onto the next basis function with weights
/// `T_k / sum T`, then subtracts the new term from every residual.
///
/// The degree drops to the largest `L'` with `(L'+1)^2` no greater than the
/// number of observations whose confidence exceeds `min_conf`.
pub fn fit_weighted_sequential(obs: &[Observation], degree: usize, min_conf: f64) -> Result<FitResult> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::UnsupportedDegree(degree));
    }
    let sum_conf: f64 = obs.iter().map(|o| o.confidence).sum();
    let usable = obs.iter().filter(|o| o.confidence > min_conf).count();
    if !(sum_conf > min_conf) || usable == 0 {
        return Err(Error::NoObservation { min_conf });
    }
    let effective_degree = degree_for_count(usable, degree);
    let n = num_coefficients(effective_degree);

    let basis: Vec<[f64; num_coefficients(MAX_SH_DEGREE)]> = obs
        .iter()
        .map(|o| {
            let mut b = [0.0; num_coefficients(MAX_SH_DEGREE)];
            eval_basis(effective_degree, o.direction, &mut b);
            b
        })
        .collect();
    let mut residuals: Vec<Color> = obs.iter().map(|o| o.color).collect();
    let mut coefficients = Vec::with_capacity(n);
    let scale = 4.0 * PI / sum_conf;

    for i in 0..n {
        let mut acc = Color::BLACK;
        for ((o, r), b) in obs.iter().zip(&residuals).zip(&basis) {
            acc += *r * (o.confidence * b[i]);
        }
        let h = acc * scale;
        for (r, b) in residuals.iter_mut().zip(&basis) {
            *r -= h * b[i];
        }
        coefficients.push(h);
    }

    Ok(FitResult {
        expansion: SHExpansion {
            max_degree: effective_degree,
            coefficients,
        },
        residuals,
        effective_degree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_dir(rng: &mut impl Rng) -> Vec3 {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).sqrt();
        Vec3::new(s * phi.cos(), s * phi.sin(), z)
    }

    fn obs(color: Color, direction: Vec3, confidence: f64) -> Observation {
        Observation {
            color,
            direction,
            confidence,
        }
    }

    #[test]
    fn index_roundtrip() {
        let mut flat = 0;
        for l in 0..=4usize {
            for m in -(l as i32)..=(l as i32) {
                let idx = SHIndex::new(l, m).unwrap();
                assert_eq!(idx.flat(), flat);
                assert_eq!(SHIndex::from_flat(flat), idx);
                flat += 1;
            }
        }
        assert!(SHIndex::new(1, 2).is_err());
    }

    #[test]
    fn basis_examples() {
        let d = Vec3::new(0.0, 0.0, 1.0);
        let y00 = sh_basis(SHIndex::new(0, 0).unwrap(), Vec3::new(0.6, 0.0, 0.8)).unwrap();
        assert!((y00 - 0.5 / PI.sqrt()).abs() < 1e-15);
        assert!((y00 - 0.2820948).abs() < 1e-7);
        let y10 = sh_basis(SHIndex::new(1, 0).unwrap(), d).unwrap();
        assert!((y10 - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
        assert!((y10 - 0.4886025).abs() < 1e-7);
        assert!(matches!(
            sh_basis(SHIndex { degree: 5, order: 0 }, d),
            Err(Error::UnsupportedDegree(5))
        ));
    }

    #[test]
    fn basis_is_orthonormal_by_monte_carlo() {
        // E[Y_i Y_j] over uniform directions is delta_ij / (4 pi).
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = num_coefficients(4);
        let mut gram = vec![0.0; k * k];
        let mut b = [0.0; 25];
        for _ in 0..n {
            eval_basis(4, uniform_dir(&mut rng), &mut b);
            for i in 0..k {
                for j in i..k {
                    gram[i * k + j] += b[i] * b[j];
                }
            }
        }
        for i in 0..k {
            for j in i..k {
                let mean = gram[i * k + j] / n as f64;
                let expect = if i == j { 1.0 / (4.0 * PI) } else { 0.0 };
                assert!((mean - expect).abs() < 0.003, "({i},{j}): {mean}");
            }
        }
    }

    #[test]
    fn basis_matches_spherical_coordinate_forms() {
        // Independent closed forms in (theta, phi) for a few entries.
        let (theta, phi): (f64, f64) = (0.7, 2.1);
        let d = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
        let mut b = [0.0; 25];
        eval_basis(4, d, &mut b);
        let ct = theta.cos();
        let st = theta.sin();
        let y2m2 = 0.25 * (15.0 / PI).sqrt() * st * st * (2.0 * phi).sin();
        let y30 = 0.25 * (7.0 / PI).sqrt() * (5.0 * ct.powi(3) - 3.0 * ct);
        let y44 = 3.0 / 16.0 * (35.0 / PI).sqrt() * st.powi(4) * (4.0 * phi).cos();
        let y4m3 = 0.75 * (35.0 / (2.0 * PI)).sqrt() * st.powi(3) * ct * (3.0 * phi).sin();
        assert!((b[4] - y2m2).abs() < 1e-13);
        assert!((b[12] - y30).abs() < 1e-13);
        assert!((b[24] - y44).abs() < 1e-13);
        assert!((b[17] - y4m3).abs() < 1e-13);
    }

    #[test]
    fn unweighted_single_observation() {
        let c = Color::new(0.2, 0.5, 0.9);
        let e = fit_unweighted(&[obs(c, Vec3::new(0.0, 1.0, 0.0), 1.0)], 0).unwrap();
        let h = e.coefficients()[0];
        assert!((h - c * (2.0 * PI.sqrt())).max_abs() < 1e-14);
        assert!((h.r - 3.5449 * 0.2).abs() < 1e-4);
        assert!(matches!(fit_unweighted(&[], 1), Err(Error::EmptyObservations)));
    }

    #[test]
    fn unweighted_constant_signal() {
        let c = Color::new(0.3, 0.6, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let set: Vec<_> = (0..10_000).map(|_| obs(c, uniform_dir(&mut rng), 1.0)).collect();
        let e = fit_unweighted(&set, 2).unwrap();
        assert!((e.coefficients()[0] - c * (2.0 * PI.sqrt())).max_abs() < 0.05);
        for h in &e.coefficients()[1..] {
            assert!(h.max_abs() < 0.05, "{h:?}");
        }
    }

    fn random_expansion(rng: &mut impl Rng, degree: usize) -> SHExpansion {
        let coeffs = (0..num_coefficients(degree))
            .map(|_| Color::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
            .collect();
        SHExpansion::from_coefficients(degree, coeffs).unwrap()
    }

    #[test]
    fn unweighted_recovers_degree_one_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = random_expansion(&mut rng, 1);
        let set: Vec<_> = (0..100_000)
            .map(|_| {
                let d = uniform_dir(&mut rng);
                obs(evaluate(&truth, d), d, 1.0)
            })
            .collect();
        let e = fit_unweighted(&set, 1).unwrap();
        for (a, b) in e.coefficients().iter().zip(truth.coefficients()) {
            assert!((*a - *b).max_abs() < 0.02, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn sequential_single_observation_has_zero_residual() {
        let c = Color::new(0.9, 0.1, 0.4);
        let fit = fit_weighted_sequential(&[obs(c, Vec3::new(1.0, 0.0, 0.0), 0.37)], 0, 1e-6).unwrap();
        assert!(fit.residuals[0].max_abs() < 1e-15);
        assert_eq!(fit.effective_degree, 0);
    }

    #[test]
    fn sequential_degree_falls_back_with_few_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut set: Vec<_> = (0..5)
            .map(|i| obs(Color::gray(0.1 * i as f64), uniform_dir(&mut rng), 0.5))
            .collect();
        set.push(obs(Color::gray(1.0), uniform_dir(&mut rng), 1e-9));
        let fit = fit_weighted_sequential(&set, 2, 1e-6).unwrap();
        assert_eq!(fit.effective_degree, 1);
        assert_eq!(fit.expansion.coefficients().len(), 4);
        assert_eq!(fit.residuals.len(), 6);
        assert_eq!(degree_for_count(9, 2), 2);
        assert_eq!(degree_for_count(8, 2), 1);
        assert_eq!(degree_for_count(100, 2), 2);
    }

    #[test]
    fn sequential_rejects_dead_sets() {
        let d = Vec3::new(0.0, 0.0, 1.0);
        assert!(matches!(
            fit_weighted_sequential(&[obs(Color::gray(1.0), d, 0.0)], 2, 1e-6),
            Err(Error::NoObservation { .. })
        ));
        assert!(fit_weighted_sequential(&[], 2, 1e-6).is_err());
    }

    #[test]
    fn sequential_matches_unweighted_for_uniform_unit_confidences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let truth = random_expansion(&mut rng, 2);
        let set: Vec<_> = (0..100_000)
            .map(|_| {
                let d = uniform_dir(&mut rng);
                obs(evaluate(&truth, d), d, 1.0)
            })
            .collect();
        let a = fit_unweighted(&set, 2).unwrap();
        let b = fit_weighted_sequential(&set, 2, 1e-6).unwrap();
        for (x, y) in a.coefficients().iter().zip(b.expansion.coefficients()) {
            assert!((*x - *y).max_abs() < 0.02);
        }
    }

    #[test]
    fn evaluate_examples() {
        let c = Color::new(0.25, 0.5, 0.75);
        let e = SHExpansion::from_coefficients(0, vec![c * (2.0 * PI.sqrt())]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert!((evaluate(&e, uniform_dir(&mut rng)) - c).max_abs() < 1e-14);
        }
        let z = SHExpansion::zeros(3).unwrap();
        assert_eq!(evaluate(&z, Vec3::new(0.0, 1.0, 0.0)), Color::BLACK);
    }

    #[test]
    fn fit_then_evaluate_on_held_out_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let truth = random_expansion(&mut rng, 2);
        let set: Vec<_> = (0..100_000)
            .map(|_| {
                let d = uniform_dir(&mut rng);
                obs(evaluate(&truth, d), d, 1.0)
            })
            .collect();
        let fit = fit_weighted_sequential(&set, 2, 1e-6).unwrap();
        // Nine coefficients each within ~0.02 bound the error by ~0.1 at
        // worst-case alignment; typical errors are far smaller.
        for _ in 0..200 {
            let d = uniform_dir(&mut rng);
            assert!((evaluate(&fit.expansion, d) - evaluate(&truth, d)).max_abs() < 0.05);
        }
    }

    fn arb_observations() -> impl Strategy<Value = Vec<Observation>> {
        prop::collection::vec(
            (
                (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
                (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
                0.01f64..1.0,
            ),
            1..40,
        )
        .prop_filter_map("zero direction", |v| {
            v.into_iter()
                .map(|((x, y, z), (r, g, b), t)| {
                    Vec3::new(x, y, z).normalize().ok().map(|d| obs(Color::new(r, g, b), d, t))
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn constant_signal_is_reproduced_exactly(
            set in arb_observations(),
            degree in 0usize..=4,
            c in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        ) {
            let color = Color::new(c.0, c.1, c.2);
            let set: Vec<_> = set.into_iter().map(|o| Observation { color, ..o }).collect();
            let fit = fit_weighted_sequential(&set, degree, 1e-6).unwrap();
            for r in &fit.residuals {
                prop_assert!(r.max_abs() < 1e-12);
            }
        }

        #[test]
        fn residuals_telescope(set in arb_observations(), degree in 0usize..=4) {
            let fit = fit_weighted_sequential(&set, degree, 1e-6).unwrap();
            for (o, r) in set.iter().zip(&fit.residuals) {
                let back = *r + evaluate(&fit.expansion, o.direction);
                prop_assert!((back - o.color).max_abs() < 1e-10);
            }
        }

        #[test]
        fn invariant_under_confidence_scaling(set in arb_observations(), degree in 0usize..=4, lambda in 0.01f64..100.0) {
            let scaled: Vec<_> = set.iter().map(|o| Observation { confidence: o.confidence * lambda, ..*o }).collect();
            // Keep the usable-observation count the same on both sides.
            prop_assume!(scaled.iter().all(|o| o.confidence > 1e-6));
            let a = fit_weighted_sequential(&set, degree, 1e-6).unwrap();
            let b = fit_weighted_sequential(&scaled, degree, 1e-6).unwrap();
            prop_assert_eq!(a.effective_degree, b.effective_degree);
            for (x, y) in a.expansion.coefficients().iter().zip(b.expansion.coefficients()) {
                prop_assert!((*x - *y).max_abs() < 1e-9);
            }
            for (x, y) in a.residuals.iter().zip(&b.residuals) {
                prop_assert!((*x - *y).max_abs() < 1e-9);
            }
        }
    }
}
