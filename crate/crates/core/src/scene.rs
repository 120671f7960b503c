//! Activated, render-ready Gaussians and the pre-sampling filters.

use nalgebra::{Cholesky, Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::formats::RawGaussianRecord;
use crate::SH_C0;

const REGULARIZATION_START: f64 = 1e-8;
const REGULARIZATION_ATTEMPTS: usize = 4;

/// Per-Gaussian record of the strongest pixel contribution seen so far and
/// the colour of that pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionState {
    pub best_contribution: Vec<f64>,
    pub best_colour: Vec<[f64; 3]>,
    /// Index, into the pose list given to the renderer, of the view that
    /// produced `best_contribution`.
    pub best_view: Vec<Option<usize>>,
    pub views_rendered: usize,
}

impl ContributionState {
    pub fn new(count: usize, background: [f64; 3]) -> Self {
        Self {
            best_contribution: vec![0.0; count],
            best_colour: vec![background; count],
            best_view: vec![None; count],
            views_rendered: 0,
        }
    }

    pub fn is_rendered(&self) -> bool {
        self.views_rendered > 0
    }
}

/// Columnar store of activated Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub positions: Vec<Vector3<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub opacities: Vec<f64>,
    pub covariances: Vec<Matrix3<f64>>,
    /// Lower Cholesky factor of each covariance.
    pub cholesky: Vec<Matrix3<f64>>,
    pub base_colours: Vec<[f64; 3]>,
    /// Index of the record each Gaussian was activated from.
    pub source_index: Vec<usize>,
    pub contribution: ContributionState,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `Σ = R diag(e^{2s}) Rᵀ`, nudged along the diagonal until it factorizes.
/// Returns the covariance and its lower Cholesky factor.
pub fn build_covariance(
    log_scale: &Vector3<f64>,
    rotation: &UnitQuaternion<f64>,
) -> Option<(Matrix3<f64>, Matrix3<f64>)> {
    let r = rotation.to_rotation_matrix().into_inner();
    let variances = log_scale.map(|s| (2.0 * s).exp());
    let sigma = r * Matrix3::from_diagonal(&variances) * r.transpose();
    let sigma = (sigma + sigma.transpose()) * 0.5;
    if !sigma.iter().all(|v| v.is_finite()) {
        return None;
    }
    if let Some(c) = Cholesky::new(sigma) {
        return Some((sigma, c.l()));
    }
    let mut eps = REGULARIZATION_START;
    for _ in 0..REGULARIZATION_ATTEMPTS {
        let candidate = sigma + Matrix3::identity() * eps;
        if let Some(c) = Cholesky::new(candidate) {
            return Some((candidate, c.l()));
        }
        eps *= 10.0;
    }
    None
}

impl GaussianScene {
    /// Activate raw records. Gaussians whose covariance cannot be factorized
    /// are dropped with a warning.
    pub fn activate(records: &[RawGaussianRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::domain("no Gaussians to activate"));
        }
        let n = records.len();
        let mut scene = GaussianScene {
            positions: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            opacities: Vec::with_capacity(n),
            covariances: Vec::with_capacity(n),
            cholesky: Vec::with_capacity(n),
            base_colours: Vec::with_capacity(n),
            source_index: Vec::with_capacity(n),
            contribution: ContributionState::new(0, [0.0; 3]),
        };
        let mut dropped = 0usize;
        for (i, r) in records.iter().enumerate() {
            r.validate(i)?;
            let [w, x, y, z] = r.rotation;
            let rotation = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
            let log_scale = Vector3::from(r.log_scale);
            let Some((cov, chol)) = build_covariance(&log_scale, &rotation) else {
                log::warn!(
                    "{}",
                    Error::Degenerate(format!(
                        "record {i} has no positive-definite covariance after regularization"
                    ))
                );
                dropped += 1;
                continue;
            };
            scene.positions.push(Vector3::from(r.position));
            scene.log_scales.push(log_scale);
            scene.rotations.push(rotation);
            scene.opacities.push(sigmoid(r.logit_opacity));
            scene.covariances.push(cov);
            scene.cholesky.push(chol);
            scene
                .base_colours
                .push(r.sh_dc.map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0)));
            scene.source_index.push(i);
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} degenerate Gaussians");
        }
        if scene.positions.is_empty() {
            return Err(Error::domain("every Gaussian was degenerate"));
        }
        scene.contribution = ContributionState::new(scene.len(), [0.0; 3]);
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Per-axis standard deviations, `e^s`.
    pub fn linear_scale(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    /// Colour carried by points sampled from Gaussian `i`: the rendered best
    /// colour when a render pass ran, the SH base colour otherwise.
    pub fn point_colour(&self, i: usize) -> [f64; 3] {
        if self.contribution.is_rendered() {
            self.contribution.best_colour[i]
        } else {
            self.base_colours[i]
        }
    }

    /// Keep Gaussians with `keep[i]`, preserving their order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filter<T>(v: &mut Vec<T>, keep: &[bool]) {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap());
        }
        filter(&mut self.positions, keep);
        filter(&mut self.log_scales, keep);
        filter(&mut self.rotations, keep);
        filter(&mut self.opacities, keep);
        filter(&mut self.covariances, keep);
        filter(&mut self.cholesky, keep);
        filter(&mut self.base_colours, keep);
        filter(&mut self.source_index, keep);
        filter(&mut self.contribution.best_contribution, keep);
        filter(&mut self.contribution.best_colour, keep);
        filter(&mut self.contribution.best_view, keep);
    }

    pub fn subset(&self, keep: &[bool]) -> Self {
        let mut out = self.clone();
        out.retain_mask(keep);
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

/// Optional pre-sampling filters. All disabled by default.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FilterConfig {
    pub bbox: Option<BoundingBox>,
    /// Upper bound on the largest per-axis standard deviation `e^s`.
    pub max_scale: Option<f64>,
    pub min_opacity: Option<f64>,
}

impl FilterConfig {
    pub fn keeps(&self, scene: &GaussianScene, i: usize) -> bool {
        self.bbox.is_none_or(|b| b.contains(&scene.positions[i]))
            && self
                .max_scale
                .is_none_or(|m| scene.linear_scale(i).max() <= m)
            && self.min_opacity.is_none_or(|m| scene.opacities[i] >= m)
    }
}

pub fn filter_scene(mut scene: GaussianScene, filters: &FilterConfig) -> Result<GaussianScene> {
    let keep: Vec<bool> = (0..scene.len()).map(|i| filters.keeps(&scene, i)).collect();
    scene.retain_mask(&keep);
    if scene.is_empty() {
        return Err(Error::domain("empty scene after filtering"));
    }
    Ok(scene)
}

/// Drop Gaussians that no rendered pixel received any contribution from.
/// A scene that was never rendered passes through unchanged.
pub fn cull_unrendered(mut scene: GaussianScene) -> Result<GaussianScene> {
    if !scene.contribution.is_rendered() {
        return Ok(scene);
    }
    let keep: Vec<bool> = scene
        .contribution
        .best_contribution
        .iter()
        .map(|&c| c > 0.0)
        .collect();
    scene.retain_mask(&keep);
    if scene.is_empty() {
        return Err(Error::domain(
            "no Gaussian contributed to any rendered pixel; check that the cameras match the scene",
        ));
    }
    Ok(scene)
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    pub fn record(position: [f64; 3], log_scale: [f64; 3], rotation: [f64; 4]) -> RawGaussianRecord {
        RawGaussianRecord {
            position,
            log_scale,
            rotation,
            logit_opacity: 0.0,
            sh_dc: [0.0; 3],
            sh_rest: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::record;
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    #[test]
    fn activation_basics() {
        let mut r = record([0.0; 3], [0.0; 3], [2.0, 0.0, 0.0, 0.0]);
        r.sh_dc = [1.7725, 0.0, -1.7725];
        let s = GaussianScene::activate(&[r]).unwrap();
        assert_eq!(s.opacities[0], 0.5);
        assert_eq!(s.base_colours[0][1], 0.5);
        assert_eq!(s.base_colours[0][0], 1.0);
        assert_eq!(s.base_colours[0][2], 0.0);
        assert!((s.rotations[0].quaternion().norm() - 1.0).abs() < 1e-12);
        assert_eq!(s.contribution.best_contribution, vec![0.0]);
        assert!(!s.contribution.is_rendered());
    }

    #[test]
    fn zero_dc_is_grey() {
        let s = GaussianScene::activate(&[record([0.0; 3], [0.0; 3], [1.0, 0.0, 0.0, 0.0])]).unwrap();
        assert_eq!(s.base_colours[0], [0.5; 3]);
    }

    #[test]
    fn empty_records_rejected() {
        assert!(matches!(GaussianScene::activate(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn covariance_examples() {
        let id = UnitQuaternion::identity();
        let (s, _) = build_covariance(&Vector3::zeros(), &id).unwrap();
        assert!(close(&s, &Matrix3::identity(), 1e-7));

        let ln2 = 2f64.ln();
        let (s, _) = build_covariance(&Vector3::new(ln2, 0.0, 0.0), &id).unwrap();
        assert!(close(&s, &Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), 1e-12));

        let half = std::f64::consts::FRAC_PI_4;
        let rz = UnitQuaternion::from_quaternion(Quaternion::new(half.cos(), 0.0, 0.0, half.sin()));
        let (s, l) = build_covariance(&Vector3::new(ln2, 0.0, 0.0), &rz).unwrap();
        assert!(close(&s, &Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), 1e-12));
        assert!(close(&(l * l.transpose()), &s, 1e-12));
    }

    #[test]
    fn collapsed_axis_is_regularized() {
        let q = UnitQuaternion::from_euler_angles(0.3, 0.7, 1.1);
        let (s, _) = build_covariance(&Vector3::new(-40.0, 0.0, 0.0), &q).unwrap();
        assert!(Cholesky::new(s).is_some());
    }

    #[test]
    fn filter_examples() {
        let mut far = record([10.0, 0.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0, 0.0]);
        far.logit_opacity = 3.0;
        let near = record([1.0, 0.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0, 0.0]);
        let scene = GaussianScene::activate(&[far, near]).unwrap();
        let bbox = FilterConfig {
            bbox: Some(BoundingBox {
                min: [-5.0; 3],
                max: [5.0; 3],
            }),
            ..Default::default()
        };
        let out = filter_scene(scene.clone(), &bbox).unwrap();
        assert_eq!(out.source_index, vec![1]);

        let opacity = FilterConfig {
            min_opacity: Some(0.3),
            ..Default::default()
        };
        assert_eq!(filter_scene(scene.clone(), &opacity).unwrap().len(), 2);

        let strict = FilterConfig {
            min_opacity: Some(0.99),
            ..Default::default()
        };
        let err = filter_scene(scene, &strict).unwrap_err();
        assert_eq!(err.to_string(), "empty scene after filtering");
    }

    #[test]
    fn cull_bypassed_without_render() {
        let scene = GaussianScene::activate(&[record([0.0; 3], [0.0; 3], [1.0, 0.0, 0.0, 0.0])]).unwrap();
        assert_eq!(cull_unrendered(scene.clone()).unwrap(), scene);
    }

    #[test]
    fn cull_drops_zero_contributions() {
        let recs: Vec<_> = (0..3)
            .map(|i| record([i as f64, 0.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0, 0.0]))
            .collect();
        let mut scene = GaussianScene::activate(&recs).unwrap();
        scene.contribution.views_rendered = 1;
        scene.contribution.best_contribution = vec![0.2, 0.0, 0.5];
        let out = cull_unrendered(scene.clone()).unwrap();
        assert_eq!(out.source_index, vec![0, 2]);
        assert_eq!(out.contribution.best_contribution, vec![0.2, 0.5]);

        scene.contribution.best_contribution = vec![0.0; 3];
        assert!(cull_unrendered(scene).is_err());
    }

    fn quaternion() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0).prop_filter("non-zero", |q| {
            q.iter().map(|v| v * v).sum::<f64>() > 1e-3
        })
    }

    proptest! {
        #[test]
        fn covariance_eigenvalues_are_squared_scales(
            s in prop::array::uniform3(-3.0f64..3.0),
            q in quaternion(),
        ) {
            let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
            let (sigma, _) = build_covariance(&Vector3::from(s), &rot).unwrap();
            prop_assert!(close(&sigma, &sigma.transpose(), 1e-12));
            let mut eig: Vec<f64> = SymmetricEigen::new(sigma).eigenvalues.iter().copied().collect();
            let mut expected: Vec<f64> = s.iter().map(|v| (2.0 * v).exp()).collect();
            eig.sort_by(f64::total_cmp);
            expected.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&expected) {
                prop_assert!((a - b).abs() <= 1e-5 * b.max(1.0), "{a} vs {b}");
                prop_assert!(*a >= 0.0);
            }
        }

        #[test]
        fn renormalizing_a_unit_quaternion_is_a_no_op(q in quaternion()) {
            let once = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
            let c = once.quaternion().coords;
            let twice = UnitQuaternion::from_quaternion(Quaternion::new(c[3], c[0], c[1], c[2]));
            prop_assert!((once.quaternion().coords - twice.quaternion().coords).abs().max() <= 1e-12);
        }

        #[test]
        fn filters_match_predicates_and_commute(
            points in prop::collection::vec((prop::array::uniform3(-10.0f64..10.0), -4.0f64..2.0, -4.0f64..4.0), 1..100),
            max_scale in 0.05f64..5.0,
            min_opacity in 0.0f64..1.0,
        ) {
            let recs: Vec<_> = points.iter().map(|(p, s, o)| {
                let mut r = record(*p, [*s, s - 0.5, s + 0.2], [1.0, 0.0, 0.0, 0.0]);
                r.logit_opacity = *o;
                r
            }).collect();
            let scene = GaussianScene::activate(&recs).unwrap();
            prop_assert_eq!(filter_scene(scene.clone(), &FilterConfig::default()).unwrap(), scene.clone());

            let bbox = BoundingBox { min: [-5.0; 3], max: [5.0, 5.0, 8.0] };
            let expected: Vec<usize> = points.iter().enumerate().filter(|(_, (p, s, o))| {
                let inside = (0..3).all(|k| p[k] >= bbox.min[k] && p[k] <= bbox.max[k]);
                let largest = [*s, s - 0.5, s + 0.2].iter().map(|v| v.exp()).fold(f64::MIN, f64::max);
                inside && largest <= max_scale && 1.0 / (1.0 + (-o).exp()) >= min_opacity
            }).map(|(i, _)| i).collect();

            let all = FilterConfig { bbox: Some(bbox), max_scale: Some(max_scale), min_opacity: Some(min_opacity) };
            let one_by_one = [
                FilterConfig { min_opacity: Some(min_opacity), ..Default::default() },
                FilterConfig { bbox: Some(bbox), ..Default::default() },
                FilterConfig { max_scale: Some(max_scale), ..Default::default() },
            ];
            match filter_scene(scene.clone(), &all) {
                Ok(out) => {
                    prop_assert_eq!(&out.source_index, &expected);
                    let mut seq = scene;
                    for f in &one_by_one {
                        seq = filter_scene(seq, f).unwrap();
                    }
                    prop_assert_eq!(seq.source_index, expected);
                }
                Err(_) => prop_assert!(expected.is_empty()),
            }
        }
    }
}
