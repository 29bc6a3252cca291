//! Persistent scene bundles and query sets.
//!
//! A bundle directory holds line-oriented files, one JSON record per line:
//!
//! ```text
//! meta.json                   format tag, bundle name, descriptor dimensions
//! cameras.jsonl               pinhole intrinsics
//! images.jsonl                reference poses (quaternion w,x,y,z + center)
//! points3d.jsonl              3D points
//! global_descriptors.jsonl    one global descriptor per reference image
//! features/image_<id>.jsonl   keypoints + local descriptors + point links
//! queries.jsonl               query camera, optional ground truth, descriptor
//! features/query_<id>.jsonl   query keypoints + local descriptors (no links)
//! ```
//!
//! Files are ASCII, newline-terminated, records sorted by id, field order
//! fixed by the record structs, floats rendered in shortest round-trip form.
//! Saving the same data twice therefore produces byte-identical directories,
//! and `load(save(b))` reproduces `b` exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, Pose, Quaternion};
use crate::ids::{CameraId, ImageId, PointId, QueryId};
use crate::index::GlobalDescriptor;
use crate::matching::LocalFeatureSet;

pub const FORMAT_VERSION: &str = "airloc-bundle/1";
pub const META_FILE: &str = "meta.json";
pub const CAMERAS_FILE: &str = "cameras.jsonl";
pub const IMAGES_FILE: &str = "images.jsonl";
pub const POINTS_FILE: &str = "points3d.jsonl";
pub const GLOBAL_DESCRIPTORS_FILE: &str = "global_descriptors.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const FEATURES_DIR: &str = "features";

pub fn image_features_path(dir: &Path, id: ImageId) -> PathBuf {
    dir.join(FEATURES_DIR).join(format!("image_{id}.jsonl"))
}

pub fn query_features_path(dir: &Path, id: QueryId) -> PathBuf {
    dir.join(FEATURES_DIR).join(format!("query_{id}.jsonl"))
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    InvalidFile { path: PathBuf, message: String },
    #[error("bundle validation failed: {0}")]
    Validation(String),
}

/// One reference image: its camera, ground-truth mapping pose, local
/// features (with 2D-3D links) and global descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceImage {
    pub camera: CameraId,
    pub pose: Pose,
    pub features: LocalFeatureSet,
    pub global_descriptor: GlobalDescriptor,
}

/// The reference map: cameras, posed images with features and descriptors,
/// and the 3D point cloud they observe.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub name: String,
    pub local_dim: usize,
    pub global_dim: usize,
    pub cameras: BTreeMap<CameraId, Camera>,
    pub images: BTreeMap<ImageId, ReferenceImage>,
    pub points3d: BTreeMap<PointId, Vector3<f64>>,
}

/// A query image: features and global descriptor but no point links, plus
/// an optional ground-truth pose for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: QueryId,
    pub camera: CameraId,
    pub features: LocalFeatureSet,
    pub global_descriptor: GlobalDescriptor,
    pub ground_truth: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuerySet {
    pub queries: Vec<Query>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Ground-truth poses keyed by query id.
    pub fn ground_truth(&self) -> BTreeMap<QueryId, Pose> {
        self.queries
            .iter()
            .filter_map(|q| q.ground_truth.map(|p| (q.id, p)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Keep at most this many keypoints per image, in file order, mirroring
    /// the feature caps of upstream extractors.
    pub max_features_per_image: Option<usize>,
}

// ---------------------------------------------------------------------------
// wire records

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaRecord {
    format: String,
    name: String,
    local_dim: usize,
    global_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    id: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

/// Pose as stored on disk and in result records: rotation quaternion in
/// `(w, x, y, z)` order plus the camera center.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
}

impl PoseRecord {
    pub fn from_pose(pose: &Pose) -> Self {
        PoseRecord {
            qw: pose.rotation.w,
            qx: pose.rotation.x,
            qy: pose.rotation.y,
            qz: pose.rotation.z,
            cx: pose.center.x,
            cy: pose.center.y,
            cz: pose.center.z,
        }
    }

    pub fn to_pose(&self) -> Pose {
        Pose::new(
            Quaternion::new(self.qw, self.qx, self.qy, self.qz),
            Vector3::new(self.cx, self.cy, self.cz),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageRecord {
    id: u32,
    camera: u32,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    cx: f64,
    cy: f64,
    cz: f64,
}

impl ImageRecord {
    fn pose(&self) -> Pose {
        Pose::new(
            Quaternion::new(self.qw, self.qx, self.qy, self.qz),
            Vector3::new(self.cx, self.cy, self.cz),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointRecord {
    id: u32,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GlobalDescriptorRecord {
    image: u32,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    u: f64,
    v: f64,
    point: Option<u32>,
    desc: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryFeatureRecord {
    u: f64,
    v: f64,
    desc: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryManifestRecord {
    id: u32,
    camera: u32,
    gt: Option<PoseRecord>,
    descriptor: Vec<f64>,
}

// ---------------------------------------------------------------------------
// low-level readers and writers

fn io_error(path: &Path, source: std::io::Error) -> BundleError {
    BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid(path: &Path, line: usize, message: impl Into<String>) -> BundleError {
    BundleError::Invalid {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<(), BundleError> {
    let mut buf = String::new();
    for record in records {
        buf.push_str(&serde_json::to_string(&record).expect("records contain only finite values"));
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| io_error(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, BundleError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| BundleError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// validation

/// Checks every bundle invariant: id references, descriptor dimensions,
/// camera intrinsics, pose norms, link presence.
pub fn validate_bundle(bundle: &SceneBundle) -> Result<(), String> {
    if bundle.local_dim == 0 || bundle.global_dim == 0 {
        return Err("descriptor dimensions must be positive".into());
    }
    for (id, camera) in &bundle.cameras {
        camera.validate().map_err(|e| format!("camera {id}: {e}"))?;
    }
    for (id, point) in &bundle.points3d {
        if !(point.x.is_finite() && point.y.is_finite() && point.z.is_finite()) {
            return Err(format!("point {id} has non-finite coordinates"));
        }
    }
    for (id, image) in &bundle.images {
        if !bundle.cameras.contains_key(&image.camera) {
            return Err(format!("image {id} references missing camera {}", image.camera));
        }
        if (image.pose.rotation.norm() - 1.0).abs() > 1e-9 {
            return Err(format!("image {id} pose rotation is not unit-norm"));
        }
        if image.global_descriptor.dim() != bundle.global_dim {
            return Err(format!(
                "image {id} global descriptor has dimension {} != {}",
                image.global_descriptor.dim(),
                bundle.global_dim
            ));
        }
        if !image.features.is_empty() && image.features.descriptor_dim() != bundle.local_dim {
            return Err(format!(
                "image {id} local descriptors have dimension {} != {}",
                image.features.descriptor_dim(),
                bundle.local_dim
            ));
        }
        if !image.features.has_links() {
            return Err(format!("reference image {id} carries no point-link table"));
        }
        for i in 0..image.features.len() {
            if let Some(pid) = image.features.point_link(i) {
                if !bundle.points3d.contains_key(&pid) {
                    return Err(format!(
                        "image {id} keypoint {i} links to missing 3D point {pid}"
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Checks a query set against the bundle it accompanies.
pub fn validate_queries(set: &QuerySet, bundle: &SceneBundle) -> Result<(), String> {
    let mut last: Option<QueryId> = None;
    for query in &set.queries {
        if let Some(prev) = last {
            if query.id <= prev {
                return Err(format!("query ids must be strictly increasing, got {} after {prev}", query.id));
            }
        }
        last = Some(query.id);
        if !bundle.cameras.contains_key(&query.camera) {
            return Err(format!("query {} references missing camera {}", query.id, query.camera));
        }
        if query.global_descriptor.dim() != bundle.global_dim {
            return Err(format!(
                "query {} global descriptor has dimension {} != {}",
                query.id,
                query.global_descriptor.dim(),
                bundle.global_dim
            ));
        }
        if !query.features.is_empty() && query.features.descriptor_dim() != bundle.local_dim {
            return Err(format!(
                "query {} local descriptors have dimension {} != {}",
                query.id,
                query.features.descriptor_dim(),
                bundle.local_dim
            ));
        }
        if query.features.has_links() {
            return Err(format!("query {} must not carry point links", query.id));
        }
        if let Some(gt) = &query.ground_truth {
            if (gt.rotation.norm() - 1.0).abs() > 1e-9 {
                return Err(format!("query {} ground-truth rotation is not unit-norm", query.id));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// save

/// Writes the bundle in canonical form. Refuses bundles that violate an
/// invariant. Saving twice yields byte-identical files.
pub fn save_bundle(bundle: &SceneBundle, dir: &Path) -> Result<(), BundleError> {
    validate_bundle(bundle).map_err(BundleError::Validation)?;
    let features_dir = dir.join(FEATURES_DIR);
    fs::create_dir_all(&features_dir).map_err(|e| io_error(&features_dir, e))?;

    let meta_path = dir.join(META_FILE);
    let meta = MetaRecord {
        format: FORMAT_VERSION.to_string(),
        name: bundle.name.clone(),
        local_dim: bundle.local_dim,
        global_dim: bundle.global_dim,
    };
    let mut meta_line = serde_json::to_string(&meta).expect("meta is plain data");
    meta_line.push('\n');
    fs::write(&meta_path, meta_line).map_err(|e| io_error(&meta_path, e))?;

    write_jsonl(
        &dir.join(CAMERAS_FILE),
        bundle.cameras.iter().map(|(id, c)| CameraRecord {
            id: id.0,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }),
    )?;

    write_jsonl(
        &dir.join(IMAGES_FILE),
        bundle.images.iter().map(|(id, img)| ImageRecord {
            id: id.0,
            camera: img.camera.0,
            qw: img.pose.rotation.w,
            qx: img.pose.rotation.x,
            qy: img.pose.rotation.y,
            qz: img.pose.rotation.z,
            cx: img.pose.center.x,
            cy: img.pose.center.y,
            cz: img.pose.center.z,
        }),
    )?;

    write_jsonl(
        &dir.join(POINTS_FILE),
        bundle.points3d.iter().map(|(id, p)| PointRecord {
            id: id.0,
            x: p.x,
            y: p.y,
            z: p.z,
        }),
    )?;

    write_jsonl(
        &dir.join(GLOBAL_DESCRIPTORS_FILE),
        bundle.images.iter().map(|(id, img)| GlobalDescriptorRecord {
            image: id.0,
            values: img.global_descriptor.values().to_vec(),
        }),
    )?;

    for (id, img) in &bundle.images {
        let records = (0..img.features.len()).map(|i| {
            let kp = img.features.keypoint(i);
            FeatureRecord {
                u: kp.x,
                v: kp.y,
                point: img.features.point_link(i).map(|p| p.0),
                desc: img.features.descriptor(i).to_vec(),
            }
        });
        write_jsonl(&image_features_path(dir, *id), records)?;
    }
    Ok(())
}

/// Writes the query set alongside a bundle directory (the queries file and
/// one feature file per query).
pub fn save_queries(set: &QuerySet, bundle: &SceneBundle, dir: &Path) -> Result<(), BundleError> {
    validate_queries(set, bundle).map_err(BundleError::Validation)?;
    let features_dir = dir.join(FEATURES_DIR);
    fs::create_dir_all(&features_dir).map_err(|e| io_error(&features_dir, e))?;

    write_jsonl(
        &dir.join(QUERIES_FILE),
        set.queries.iter().map(|q| QueryManifestRecord {
            id: q.id.0,
            camera: q.camera.0,
            gt: q.ground_truth.as_ref().map(PoseRecord::from_pose),
            descriptor: q.global_descriptor.values().to_vec(),
        }),
    )?;

    for q in &set.queries {
        let records = (0..q.features.len()).map(|i| {
            let kp = q.features.keypoint(i);
            QueryFeatureRecord {
                u: kp.x,
                v: kp.y,
                desc: q.features.descriptor(i).to_vec(),
            }
        });
        write_jsonl(&query_features_path(dir, q.id), records)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// load

fn read_meta(dir: &Path) -> Result<MetaRecord, BundleError> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let meta: MetaRecord = serde_json::from_str(text.trim()).map_err(|e| BundleError::Parse {
        path: path.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    if meta.format != FORMAT_VERSION {
        return Err(BundleError::InvalidFile {
            path,
            message: format!("unsupported format '{}', expected '{FORMAT_VERSION}'", meta.format),
        });
    }
    if meta.local_dim == 0 || meta.global_dim == 0 {
        return Err(BundleError::InvalidFile {
            path,
            message: "descriptor dimensions must be positive".into(),
        });
    }
    Ok(meta)
}

fn load_feature_rows(
    path: &Path,
    rows: Vec<(usize, FeatureRecord)>,
    local_dim: usize,
    points3d: Option<&BTreeMap<PointId, Vector3<f64>>>,
    options: &LoadOptions,
) -> Result<LocalFeatureSet, BundleError> {
    let cap = options.max_features_per_image.unwrap_or(usize::MAX);
    let mut keypoints = Vec::new();
    let mut descriptors = Vec::new();
    let mut links = Vec::new();
    for (line, rec) in rows.into_iter().take(cap) {
        if !(rec.u.is_finite() && rec.v.is_finite()) {
            return Err(invalid(path, line, "non-finite keypoint coordinates"));
        }
        if rec.desc.len() != local_dim {
            return Err(invalid(
                path,
                line,
                format!("descriptor has {} values, expected {local_dim}", rec.desc.len()),
            ));
        }
        if let (Some(pid), Some(points)) = (rec.point, points3d) {
            if !points.contains_key(&PointId(pid)) {
                return Err(invalid(
                    path,
                    line,
                    format!("point link references 3D point {pid} absent from {POINTS_FILE}"),
                ));
            }
        }
        keypoints.push(Vector2::new(rec.u, rec.v));
        descriptors.push(rec.desc);
        links.push(rec.point.map(PointId));
    }
    LocalFeatureSet::new(keypoints, descriptors, Some(links)).map_err(|e| BundleError::InvalidFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_bundle(dir: &Path) -> Result<SceneBundle, BundleError> {
    load_bundle_with(dir, &LoadOptions::default())
}

/// Loads and fully validates a bundle; errors name the offending file and
/// line.
pub fn load_bundle_with(dir: &Path, options: &LoadOptions) -> Result<SceneBundle, BundleError> {
    let meta = read_meta(dir)?;

    let cameras_path = dir.join(CAMERAS_FILE);
    let mut cameras = BTreeMap::new();
    for (line, rec) in read_jsonl::<CameraRecord>(&cameras_path)? {
        let camera = Camera::new(rec.fx, rec.fy, rec.cx, rec.cy, rec.width, rec.height)
            .map_err(|e| invalid(&cameras_path, line, e.to_string()))?;
        if cameras.insert(CameraId(rec.id), camera).is_some() {
            return Err(invalid(&cameras_path, line, format!("duplicate camera id {}", rec.id)));
        }
    }

    let points_path = dir.join(POINTS_FILE);
    let mut points3d = BTreeMap::new();
    for (line, rec) in read_jsonl::<PointRecord>(&points_path)? {
        if !(rec.x.is_finite() && rec.y.is_finite() && rec.z.is_finite()) {
            return Err(invalid(&points_path, line, "non-finite point coordinates"));
        }
        if points3d
            .insert(PointId(rec.id), Vector3::new(rec.x, rec.y, rec.z))
            .is_some()
        {
            return Err(invalid(&points_path, line, format!("duplicate point id {}", rec.id)));
        }
    }

    let gdesc_path = dir.join(GLOBAL_DESCRIPTORS_FILE);
    let mut descriptors: BTreeMap<ImageId, (usize, GlobalDescriptor)> = BTreeMap::new();
    for (line, rec) in read_jsonl::<GlobalDescriptorRecord>(&gdesc_path)? {
        if rec.values.len() != meta.global_dim {
            return Err(invalid(
                &gdesc_path,
                line,
                format!("descriptor has {} values, expected {}", rec.values.len(), meta.global_dim),
            ));
        }
        let desc = GlobalDescriptor::new(rec.values)
            .map_err(|e| invalid(&gdesc_path, line, e.to_string()))?;
        if descriptors.insert(ImageId(rec.image), (line, desc)).is_some() {
            return Err(invalid(
                &gdesc_path,
                line,
                format!("duplicate global descriptor for image {}", rec.image),
            ));
        }
    }

    let images_path = dir.join(IMAGES_FILE);
    let mut images = BTreeMap::new();
    for (line, rec) in read_jsonl::<ImageRecord>(&images_path)? {
        let id = ImageId(rec.id);
        if images.contains_key(&id) {
            return Err(invalid(&images_path, line, format!("duplicate image id {}", rec.id)));
        }
        if !cameras.contains_key(&CameraId(rec.camera)) {
            return Err(invalid(
                &images_path,
                line,
                format!("image {} references camera {} absent from {CAMERAS_FILE}", rec.id, rec.camera),
            ));
        }
        let norm = Quaternion::new(rec.qw, rec.qx, rec.qy, rec.qz).norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(invalid(&images_path, line, "pose quaternion has zero or non-finite norm"));
        }
        let (_, global_descriptor) = descriptors.remove(&id).ok_or_else(|| BundleError::InvalidFile {
            path: gdesc_path.clone(),
            message: format!("no global descriptor for image {}", rec.id),
        })?;

        let features_path = image_features_path(dir, id);
        let rows = read_jsonl::<FeatureRecord>(&features_path)?;
        let features = load_feature_rows(&features_path, rows, meta.local_dim, Some(&points3d), options)?;

        images.insert(
            id,
            ReferenceImage {
                camera: CameraId(rec.camera),
                pose: rec.pose(),
                features,
                global_descriptor,
            },
        );
    }
    if let Some((id, (line, _))) = descriptors.into_iter().next() {
        return Err(invalid(
            &gdesc_path,
            line,
            format!("global descriptor references image {id} absent from {IMAGES_FILE}"),
        ));
    }

    let bundle = SceneBundle {
        name: meta.name,
        local_dim: meta.local_dim,
        global_dim: meta.global_dim,
        cameras,
        images,
        points3d,
    };
    validate_bundle(&bundle).map_err(BundleError::Validation)?;
    Ok(bundle)
}

pub fn load_queries(dir: &Path, bundle: &SceneBundle) -> Result<QuerySet, BundleError> {
    load_queries_with(dir, bundle, &LoadOptions::default())
}

pub fn load_queries_with(
    dir: &Path,
    bundle: &SceneBundle,
    options: &LoadOptions,
) -> Result<QuerySet, BundleError> {
    let queries_path = dir.join(QUERIES_FILE);
    let mut queries = Vec::new();
    for (line, rec) in read_jsonl::<QueryManifestRecord>(&queries_path)? {
        if !bundle.cameras.contains_key(&CameraId(rec.camera)) {
            return Err(invalid(
                &queries_path,
                line,
                format!("query {} references camera {} absent from {CAMERAS_FILE}", rec.id, rec.camera),
            ));
        }
        if rec.descriptor.len() != bundle.global_dim {
            return Err(invalid(
                &queries_path,
                line,
                format!("descriptor has {} values, expected {}", rec.descriptor.len(), bundle.global_dim),
            ));
        }
        let global_descriptor = GlobalDescriptor::new(rec.descriptor)
            .map_err(|e| invalid(&queries_path, line, e.to_string()))?;

        let id = QueryId(rec.id);
        let features_path = query_features_path(dir, id);
        let rows = read_jsonl::<QueryFeatureRecord>(&features_path)?;
        let cap = options.max_features_per_image.unwrap_or(usize::MAX);
        let mut keypoints = Vec::new();
        let mut descs = Vec::new();
        for (fline, frec) in rows.into_iter().take(cap) {
            if !(frec.u.is_finite() && frec.v.is_finite()) {
                return Err(invalid(&features_path, fline, "non-finite keypoint coordinates"));
            }
            if frec.desc.len() != bundle.local_dim {
                return Err(invalid(
                    &features_path,
                    fline,
                    format!("descriptor has {} values, expected {}", frec.desc.len(), bundle.local_dim),
                ));
            }
            keypoints.push(Vector2::new(frec.u, frec.v));
            descs.push(frec.desc);
        }
        let features = LocalFeatureSet::new(keypoints, descs, None).map_err(|e| BundleError::InvalidFile {
            path: features_path.clone(),
            message: e.to_string(),
        })?;

        queries.push(Query {
            id,
            camera: CameraId(rec.camera),
            features,
            global_descriptor,
            ground_truth: rec.gt.map(|p| p.to_pose()),
        });
    }
    let set = QuerySet { queries };
    validate_queries(&set, bundle).map_err(BundleError::Validation)?;
    Ok(set)
}
