//! Seeded synthetic scenes with ground truth.
//!
//! The generator builds a landmark cloud inside a box, a ring of reference
//! cameras looking at it, and a query population placed at controlled
//! offsets from that ring. Every landmark carries a random unit "base" local
//! descriptor and a random orientation normal; a landmark is visible from a
//! viewpoint when it falls in the frustum and the viewpoint lies inside the
//! landmark's visibility cone. Per-image local features are the (noisy)
//! projections of visible landmarks plus random distractors; the global
//! descriptor pools the visible landmarks' base descriptors through a fixed
//! seeded projection and is then L2-normalized. Covisibility therefore
//! drives global similarity, which is what links retrieval similarity to the
//! match ratio downstream.
//!
//! Generation draws from a single ChaCha8 stream (plus one derived stream
//! for the pooling projection), so equal configs produce byte-identical
//! bundles on every platform.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{Query, QuerySet, ReferenceImage, SceneBundle};
use crate::geometry::{Camera, Pose, Quaternion};
use crate::ids::{CameraId, ImageId, PointId, QueryId};
use crate::index::GlobalDescriptor;
use crate::matching::LocalFeatureSet;

/// Images observing fewer landmarks than this are rejected and their
/// viewpoint re-sampled.
pub const MIN_VISIBLE_LANDMARKS: usize = 8;

const VIEWPOINT_ATTEMPTS: usize = 64;

/// Landmark visibility cone half-angle (cosine). A landmark is seen only
/// from viewpoints within 50 degrees of its orientation normal, which keeps
/// per-image feature counts bounded and gives distinct viewpoints distinct
/// landmark sets.
const CONE_COS: f64 = 0.64;

const NEAR_PLANE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("viewpoint generation failed: {0}")]
    ViewpointGeneration(String),
}

/// One tier of the query population: a fraction of queries placed at most
/// `max_offset_m` away from the reference ring with their look-at
/// orientation perturbed by at most `max_offset_deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetTier {
    pub fraction: f64,
    pub max_offset_m: f64,
    pub max_offset_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub num_points: usize,
    /// Side length of the landmark box (meters).
    pub scene_extent: f64,
    pub num_reference_images: usize,
    pub num_queries: usize,
    pub local_descriptor_dim: usize,
    pub global_descriptor_dim: usize,
    /// Keypoint noise (pixels, per axis).
    pub pixel_noise_sigma: f64,
    /// Additive local-descriptor noise before renormalization.
    pub local_descriptor_noise_sigma: f64,
    pub distractor_features_per_image: usize,
    /// Query population tiers; fractions must sum to 1.
    pub query_offset_profile: Vec<OffsetTier>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 7,
            num_points: 2000,
            scene_extent: 10.0,
            num_reference_images: 150,
            num_queries: 200,
            local_descriptor_dim: 64,
            global_descriptor_dim: 64,
            pixel_noise_sigma: 1.0,
            local_descriptor_noise_sigma: 0.05,
            distractor_features_per_image: 30,
            query_offset_profile: vec![
                OffsetTier {
                    fraction: 0.25,
                    max_offset_m: 0.2,
                    max_offset_deg: 2.0,
                },
                OffsetTier {
                    fraction: 0.45,
                    max_offset_m: 2.5,
                    max_offset_deg: 18.0,
                },
                OffsetTier {
                    fraction: 0.30,
                    max_offset_m: 8.0,
                    max_offset_deg: 50.0,
                },
            ],
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.num_points == 0 {
            return fail("num_points must be positive".into());
        }
        if self.num_reference_images == 0 {
            return fail("num_reference_images must be positive".into());
        }
        if self.num_queries == 0 {
            return fail("num_queries must be positive".into());
        }
        if !(self.scene_extent.is_finite() && self.scene_extent > 0.0) {
            return fail(format!("scene_extent must be positive, got {}", self.scene_extent));
        }
        if self.local_descriptor_dim < 2 || self.global_descriptor_dim < 2 {
            return fail("descriptor dimensions must be at least 2".into());
        }
        for (name, sigma) in [
            ("pixel_noise_sigma", self.pixel_noise_sigma),
            ("local_descriptor_noise_sigma", self.local_descriptor_noise_sigma),
        ] {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return fail(format!("{name} must be nonnegative, got {sigma}"));
            }
        }
        if self.query_offset_profile.is_empty() {
            return fail("query_offset_profile must not be empty".into());
        }
        let mut total = 0.0;
        for tier in &self.query_offset_profile {
            if !(tier.fraction.is_finite() && tier.fraction >= 0.0) {
                return fail("tier fractions must be nonnegative".into());
            }
            if !(tier.max_offset_m.is_finite() && tier.max_offset_m >= 0.0)
                || !(tier.max_offset_deg.is_finite() && tier.max_offset_deg >= 0.0)
            {
                return fail("tier offsets must be nonnegative".into());
            }
            total += tier.fraction;
        }
        if (total - 1.0).abs() > 1e-9 {
            return fail(format!("tier fractions must sum to 1, got {total}"));
        }
        Ok(())
    }
}

struct Landmark {
    position: Vector3<f64>,
    normal: Vector3<f64>,
    base: Vec<f64>,
}

fn random_unit_vec3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// World-to-camera pose of a camera at `center` aimed at `target`, image y
/// pointing world-down.
fn look_at(center: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let forward = (target - center).normalize();
    let up = Vector3::z();
    let mut right = forward.cross(&up);
    if right.norm() < 1e-9 {
        right = Vector3::x();
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    Pose::new(Quaternion::from_rotation_matrix(&rot), center)
}

/// Position on the reference trajectory: a circle of radius `1.05 × extent`
/// with a gentle vertical wave.
fn ring_position(theta: f64, extent: f64) -> Vector3<f64> {
    let radius = 1.05 * extent;
    Vector3::new(
        radius * theta.cos(),
        radius * theta.sin(),
        0.1 * extent * (2.0 * theta).sin(),
    )
}

fn shared_camera() -> Camera {
    Camera {
        fx: 600.0,
        fy: 600.0,
        cx: 320.0,
        cy: 240.0,
        width: 640,
        height: 480,
    }
}

/// Landmarks visible from a pose: inside the frustum, in front of the near
/// plane, and within the landmark's orientation cone. Exact projections are
/// returned alongside the ids, in ascending landmark id order.
fn visible_landmarks(
    camera: &Camera,
    pose: &Pose,
    landmarks: &BTreeMap<PointId, Landmark>,
) -> Vec<(PointId, Vector2<f64>)> {
    let mut out = Vec::new();
    for (id, lm) in landmarks {
        let to_cam = pose.center - lm.position;
        let dist = to_cam.norm();
        if dist < 1e-9 {
            continue;
        }
        if lm.normal.dot(&to_cam) / dist < CONE_COS {
            continue;
        }
        let p = pose.world_to_camera(&lm.position);
        if p.z <= NEAR_PLANE {
            continue;
        }
        let pixel = Vector2::new(
            camera.fx * p.x / p.z + camera.cx,
            camera.fy * p.y / p.z + camera.cy,
        );
        if camera.contains(&pixel) {
            out.push((*id, pixel));
        }
    }
    out
}

/// Pools the visible landmarks' base descriptors through the projection
/// matrix and L2-normalizes.
fn global_descriptor(
    visible: &[(PointId, Vector2<f64>)],
    landmarks: &BTreeMap<PointId, Landmark>,
    projection: &[f64],
    local_dim: usize,
    global_dim: usize,
) -> GlobalDescriptor {
    let mut mean = vec![0.0f64; local_dim];
    for (id, _) in visible {
        for (m, b) in mean.iter_mut().zip(&landmarks[id].base) {
            *m += b;
        }
    }
    let inv = 1.0 / visible.len() as f64;
    for m in mean.iter_mut() {
        *m *= inv;
    }
    let mut pooled = vec![0.0f64; global_dim];
    for (g, row) in pooled.iter_mut().zip(projection.chunks(local_dim)) {
        *g = row.iter().zip(&mean).map(|(a, b)| a * b).sum();
    }
    GlobalDescriptor::new(pooled).expect("pooled descriptor of a nonempty visible set is nonzero")
}

fn build_features(
    rng: &mut ChaCha8Rng,
    camera: &Camera,
    visible: &[(PointId, Vector2<f64>)],
    landmarks: &BTreeMap<PointId, Landmark>,
    config: &WorldConfig,
    with_links: bool,
) -> LocalFeatureSet {
    let mut keypoints = Vec::with_capacity(visible.len() + config.distractor_features_per_image);
    let mut descriptors = Vec::with_capacity(keypoints.capacity());
    let mut links = Vec::with_capacity(keypoints.capacity());

    for (id, pixel) in visible {
        let noisy = Vector2::new(
            pixel.x + config.pixel_noise_sigma * rng.sample::<f64, _>(StandardNormal),
            pixel.y + config.pixel_noise_sigma * rng.sample::<f64, _>(StandardNormal),
        );
        let base = &landmarks[id].base;
        let desc: Vec<f32> = base
            .iter()
            .map(|b| {
                (b + config.local_descriptor_noise_sigma * rng.sample::<f64, _>(StandardNormal)) as f32
            })
            .collect();
        keypoints.push(noisy);
        descriptors.push(desc);
        links.push(Some(*id));
    }
    for _ in 0..config.distractor_features_per_image {
        keypoints.push(Vector2::new(
            rng.random_range(0.0..camera.width as f64),
            rng.random_range(0.0..camera.height as f64),
        ));
        descriptors.push(
            random_unit(rng, config.local_descriptor_dim)
                .into_iter()
                .map(|v| v as f32)
                .collect(),
        );
        links.push(None);
    }

    LocalFeatureSet::new(keypoints, descriptors, with_links.then_some(links))
        .expect("synthetic features are finite and uniform")
}

/// Largest-remainder apportionment of `n` queries over the tier fractions.
fn tier_counts(profile: &[OffsetTier], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = profile.iter().map(|t| t.fraction * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..profile.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in 0..n.saturating_sub(assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Generates a scene bundle and query population with ground truth.
pub fn generate(config: &WorldConfig) -> Result<(SceneBundle, QuerySet), SynthError> {
    config.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let camera = shared_camera();
    let extent = config.scene_extent;

    // Landmark cloud: positions in a flattened box, orientation normals and
    // base descriptors uniform on their spheres.
    let mut landmarks = BTreeMap::new();
    for i in 0..config.num_points {
        let position = Vector3::new(
            rng.random_range(-0.5 * extent..0.5 * extent),
            rng.random_range(-0.5 * extent..0.5 * extent),
            rng.random_range(-0.25 * extent..0.25 * extent),
        );
        landmarks.insert(
            PointId(i as u32),
            Landmark {
                position,
                normal: random_unit_vec3(&mut rng),
                base: random_unit(&mut rng, config.local_descriptor_dim),
            },
        );
    }

    // Fixed pooling projection, drawn from a stream derived from the seed so
    // it does not disturb the main draw order.
    let mut projection_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xA076_1D64_78BD_642F);
    let projection: Vec<f64> = (0..config.global_descriptor_dim * config.local_descriptor_dim)
        .map(|_| projection_rng.sample::<f64, _>(StandardNormal) / (config.local_descriptor_dim as f64).sqrt())
        .collect();

    // Reference ring.
    let mut images = BTreeMap::new();
    for i in 0..config.num_reference_images {
        let theta = std::f64::consts::TAU * i as f64 / config.num_reference_images as f64;
        let mut pose = look_at(ring_position(theta, extent), Vector3::zeros());
        let mut visible = visible_landmarks(&camera, &pose, &landmarks);
        let mut attempts = 0;
        while visible.len() < MIN_VISIBLE_LANDMARKS {
            attempts += 1;
            if attempts > VIEWPOINT_ATTEMPTS {
                return Err(SynthError::ViewpointGeneration(format!(
                    "reference image {i} sees only {} landmarks after {VIEWPOINT_ATTEMPTS} attempts; \
                     increase num_points or scene_extent",
                    visible.len()
                )));
            }
            let jitter = random_unit_vec3(&mut rng) * rng.random_range(0.0..0.05 * extent);
            pose = look_at(ring_position(theta, extent) + jitter, Vector3::zeros());
            visible = visible_landmarks(&camera, &pose, &landmarks);
        }

        let features = build_features(&mut rng, &camera, &visible, &landmarks, config, true);
        let gdesc = global_descriptor(
            &visible,
            &landmarks,
            &projection,
            config.local_descriptor_dim,
            config.global_descriptor_dim,
        );
        images.insert(
            ImageId(i as u32),
            ReferenceImage {
                camera: CameraId(0),
                pose,
                features,
                global_descriptor: gdesc,
            },
        );
    }

    // Query population.
    let counts = tier_counts(&config.query_offset_profile, config.num_queries);
    let mut queries = Vec::with_capacity(config.num_queries);
    let mut query_id = 0u32;
    for (tier, &count) in config.query_offset_profile.iter().zip(&counts) {
        for _ in 0..count {
            let mut accepted = None;
            for attempt in 0..=VIEWPOINT_ATTEMPTS {
                if attempt == VIEWPOINT_ATTEMPTS {
                    return Err(SynthError::ViewpointGeneration(format!(
                        "query {query_id} found no viewpoint with {MIN_VISIBLE_LANDMARKS}+ visible \
                         landmarks within its offset tier"
                    )));
                }
                let exact_tier = tier.max_offset_m == 0.0 && tier.max_offset_deg == 0.0;
                let anchor = if exact_tier {
                    // Zero-offset tiers reproduce reference viewpoints exactly.
                    let i = rng.random_range(0..config.num_reference_images);
                    std::f64::consts::TAU * i as f64 / config.num_reference_images as f64
                } else {
                    rng.random_range(0.0..std::f64::consts::TAU)
                };
                let center = ring_position(anchor, extent)
                    + if exact_tier {
                        Vector3::zeros()
                    } else {
                        random_unit_vec3(&mut rng) * rng.random_range(0.0..=tier.max_offset_m)
                    };
                let aimed = look_at(center, Vector3::zeros());
                let pose = if exact_tier {
                    aimed
                } else {
                    let axis = random_unit_vec3(&mut rng);
                    let angle = rng.random_range(0.0..=tier.max_offset_deg).to_radians();
                    Pose::new(
                        Quaternion::from_axis_angle(&axis, angle) * aimed.rotation,
                        center,
                    )
                };
                let visible = visible_landmarks(&camera, &pose, &landmarks);
                if visible.len() >= MIN_VISIBLE_LANDMARKS {
                    accepted = Some((pose, visible));
                    break;
                }
            }
            let (pose, visible) = accepted.expect("loop either accepts or errors");
            let features = build_features(&mut rng, &camera, &visible, &landmarks, config, false);
            let gdesc = global_descriptor(
                &visible,
                &landmarks,
                &projection,
                config.local_descriptor_dim,
                config.global_descriptor_dim,
            );
            queries.push(Query {
                id: QueryId(query_id),
                camera: CameraId(0),
                features,
                global_descriptor: gdesc,
                ground_truth: Some(pose),
            });
            query_id += 1;
        }
    }

    let mut cameras = BTreeMap::new();
    cameras.insert(CameraId(0), camera);
    let bundle = SceneBundle {
        name: format!("synthworld-{}", config.seed),
        local_dim: config.local_descriptor_dim,
        global_dim: config.global_descriptor_dim,
        cameras,
        images,
        points3d: landmarks.iter().map(|(id, lm)| (*id, lm.position)).collect(),
    };
    Ok((bundle, QuerySet { queries }))
}

/// Small world shared by the in-crate tests; big enough for stable
/// visibility, small enough to stay fast.
#[cfg(test)]
pub(crate) fn small_test_config() -> WorldConfig {
    WorldConfig {
        seed: 11,
        num_points: 400,
        scene_extent: 8.0,
        num_reference_images: 24,
        num_queries: 12,
        local_descriptor_dim: 16,
        global_descriptor_dim: 16,
        pixel_noise_sigma: 0.4,
        local_descriptor_noise_sigma: 0.05,
        distractor_features_per_image: 8,
        ..WorldConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{save_bundle, save_queries, validate_bundle, validate_queries};
    use crate::index::{cosine_similarity, DescriptorIndex};

    fn small_config() -> WorldConfig {
        small_test_config()
    }

    #[test]
    fn generated_world_passes_bundle_validation() {
        let (bundle, queries) = generate(&small_config()).unwrap();
        validate_bundle(&bundle).unwrap();
        validate_queries(&queries, &bundle).unwrap();
        assert_eq!(bundle.images.len(), 24);
        assert_eq!(queries.len(), 12);
        for img in bundle.images.values() {
            assert!(img.features.len() >= MIN_VISIBLE_LANDMARKS);
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_bundles() {
        let config = small_config();
        let (b1, q1) = generate(&config).unwrap();
        let (b2, q2) = generate(&config).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(q1, q2);

        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_bundle(&b1, d1.path()).unwrap();
        save_queries(&q1, &b1, d1.path()).unwrap();
        save_bundle(&b2, d2.path()).unwrap();
        save_queries(&q2, &b2, d2.path()).unwrap();
        let read_all = |d: &std::path::Path| {
            let mut out = Vec::new();
            let mut stack = vec![d.to_path_buf()];
            while let Some(p) = stack.pop() {
                for e in std::fs::read_dir(&p).unwrap() {
                    let path = e.unwrap().path();
                    if path.is_dir() {
                        stack.push(path);
                    } else {
                        out.push((path.strip_prefix(d).unwrap().to_path_buf(), std::fs::read(path.clone()).unwrap()));
                    }
                }
            }
            out.sort();
            out
        };
        assert_eq!(read_all(d1.path()), read_all(d2.path()));
    }

    #[test]
    fn zero_offset_noiseless_queries_hit_similarity_one() {
        let config = WorldConfig {
            pixel_noise_sigma: 0.0,
            local_descriptor_noise_sigma: 0.0,
            num_queries: 6,
            query_offset_profile: vec![OffsetTier {
                fraction: 1.0,
                max_offset_m: 0.0,
                max_offset_deg: 0.0,
            }],
            ..small_config()
        };
        let (bundle, queries) = generate(&config).unwrap();
        let index = DescriptorIndex::from_bundle(&bundle);
        for q in &queries.queries {
            let top = index.retrieve_top_k(&q.global_descriptor, 1).unwrap();
            assert!(
                (top.items[0].similarity - 1.0).abs() < 1e-12,
                "top similarity {}",
                top.items[0].similarity
            );
        }
    }

    #[test]
    fn noiseless_reference_features_reproject_exactly() {
        let config = WorldConfig {
            pixel_noise_sigma: 0.0,
            local_descriptor_noise_sigma: 0.0,
            ..small_config()
        };
        let (bundle, _) = generate(&config).unwrap();
        let camera = bundle.cameras[&CameraId(0)];
        for img in bundle.images.values() {
            for i in 0..img.features.len() {
                if let Some(pid) = img.features.point_link(i) {
                    let projected =
                        crate::geometry::project(&camera, &img.pose, &bundle.points3d[&pid]).unwrap();
                    let residual = (projected - img.features.keypoint(i)).norm();
                    assert!(residual < 1e-9, "residual {residual}");
                }
            }
        }
    }

    #[test]
    fn global_descriptors_reflect_covisibility() {
        // Neighboring ring cameras share most landmarks; opposite cameras
        // share few. Their descriptor similarities must reflect that.
        let (bundle, _) = generate(&small_config()).unwrap();
        let n = bundle.images.len() as u32;
        let a = &bundle.images[&ImageId(0)].global_descriptor;
        let neighbor = &bundle.images[&ImageId(1)].global_descriptor;
        let opposite = &bundle.images[&ImageId(n / 2)].global_descriptor;
        let sim_near = cosine_similarity(a, neighbor).unwrap();
        let sim_far = cosine_similarity(a, opposite).unwrap();
        assert!(sim_near > sim_far + 0.2, "near {sim_near}, far {sim_far}");
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut c = small_config();
        c.num_points = 0;
        assert!(matches!(generate(&c), Err(SynthError::InvalidConfig(_))));

        let mut c = small_config();
        c.query_offset_profile[0].fraction = 0.9; // fractions no longer sum to 1
        assert!(matches!(generate(&c), Err(SynthError::InvalidConfig(_))));

        let mut c = small_config();
        c.pixel_noise_sigma = -1.0;
        assert!(matches!(generate(&c), Err(SynthError::InvalidConfig(_))));
    }

    #[test]
    fn sparse_worlds_fail_with_viewpoint_error() {
        let config = WorldConfig {
            num_points: 10, // far too sparse for the visibility floor
            ..small_config()
        };
        assert!(matches!(
            generate(&config),
            Err(SynthError::ViewpointGeneration(_))
        ));
    }

    #[test]
    fn tier_counts_apportion_exactly() {
        let profile = vec![
            OffsetTier { fraction: 0.25, max_offset_m: 0.0, max_offset_deg: 0.0 },
            OffsetTier { fraction: 0.45, max_offset_m: 1.0, max_offset_deg: 5.0 },
            OffsetTier { fraction: 0.30, max_offset_m: 2.0, max_offset_deg: 9.0 },
        ];
        let counts = tier_counts(&profile, 7);
        assert_eq!(counts.iter().sum::<usize>(), 7);
        assert_eq!(tier_counts(&profile, 200).iter().sum::<usize>(), 200);
    }
}
