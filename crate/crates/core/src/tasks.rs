//! Episodic task generation: synthetic families and folder-backed image
//! classification.
//!
//! Every sampler is a pure function of its seed: the same seed always yields
//! bitwise-identical episodes, which is what makes paired method comparisons
//! and rerun determinism possible. Classification episodes use episode-local
//! labels `0..n_way` in class-major row order (all shots of class 0, then
//! class 1, ...).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Targets;
use crate::rng::rng_from_seed;

/// Identifying metadata for a sampled episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInfo {
    pub family: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub seed: u64,
}

/// One few-shot episode: a support set to adapt on and a query set to
/// evaluate on.
#[derive(Debug, Clone)]
pub struct Task {
    pub support_x: Matrix,
    pub support_y: Targets,
    pub query_x: Matrix,
    pub query_y: Targets,
    pub info: TaskInfo,
}

/// Synthetic classification family: class centers drawn uniformly from
/// `[-center_scale, center_scale]^dim`, examples from an isotropic Gaussian
/// of deviation `spread` around their center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFamily {
    pub dim: usize,
    pub center_scale: f64,
    pub spread: f64,
}

impl Default for GaussianFamily {
    fn default() -> Self {
        GaussianFamily {
            dim: 16,
            center_scale: 3.0,
            spread: 0.5,
        }
    }
}

impl GaussianFamily {
    /// Same centers distribution with doubled within-class spread; a harder
    /// relative of the default used for cross-family evaluation.
    pub fn wide() -> Self {
        GaussianFamily {
            spread: 1.0,
            ..GaussianFamily::default()
        }
    }

    /// Comma-free so it can sit in a CSV column without quoting.
    pub fn label(&self) -> String {
        format!(
            "gaussian(dim={};scale={};spread={})",
            self.dim, self.center_scale, self.spread
        )
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("gaussian dim must be at least 1".into()));
        }
        if !self.center_scale.is_finite() || self.center_scale <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gaussian center scale must be finite and > 0, got {}",
                self.center_scale
            )));
        }
        if !self.spread.is_finite() || self.spread < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gaussian spread must be finite and >= 0, got {}",
                self.spread
            )));
        }
        Ok(())
    }
}

fn validate_counts(n_way: usize, k_shot: usize, q_query: usize) -> Result<()> {
    if n_way < 2 {
        return Err(Error::InvalidConfig(format!(
            "classification episodes need n_way >= 2, got {n_way}"
        )));
    }
    if k_shot == 0 || q_query == 0 {
        return Err(Error::InvalidConfig(
            "k_shot and q_query must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Draws one N-way K-shot episode from a Gaussian-mixture family.
pub fn sample_gaussian_task(
    family: &GaussianFamily,
    n_way: usize,
    k_shot: usize,
    q_query: usize,
    seed: u64,
) -> Result<Task> {
    family.validate()?;
    validate_counts(n_way, k_shot, q_query)?;
    let mut rng = rng_from_seed(seed);
    let s = family.center_scale;
    let mut centers = Vec::with_capacity(n_way);
    for _ in 0..n_way {
        let row: Vec<f64> = (0..family.dim).map(|_| rng.gen_range(-s..=s)).collect();
        centers.push(row);
    }
    let mut draw_split = |shots: usize| -> (Matrix, Vec<usize>) {
        let mut rows = Vec::with_capacity(n_way * shots);
        let mut labels = Vec::with_capacity(n_way * shots);
        for (class, center) in centers.iter().enumerate() {
            for _ in 0..shots {
                let row: Vec<f64> = center
                    .iter()
                    .map(|&c| {
                        let noise: f64 = rng.sample(StandardNormal);
                        c + family.spread * noise
                    })
                    .collect();
                rows.push(row);
                labels.push(class);
            }
        }
        (Matrix::from_rows(&rows).expect("generated rows are well-formed"), labels)
    };
    let (support_x, support_labels) = draw_split(k_shot);
    let (query_x, query_labels) = draw_split(q_query);
    Ok(Task {
        support_x,
        support_y: Targets::Labels(support_labels),
        query_x,
        query_y: Targets::Labels(query_labels),
        info: TaskInfo {
            family: family.label(),
            n_way,
            k_shot,
            q_query,
            seed,
        },
    })
}

/// Amplitude range of the sinusoid regression family.
pub const SINUSOID_AMPLITUDE: (f64, f64) = (0.1, 5.0);
/// Input range of the sinusoid regression family.
pub const SINUSOID_INPUT: (f64, f64) = (-5.0, 5.0);

/// Draws one sinusoid regression episode: y = A sin(x + phi) with task-level
/// amplitude A in [0.1, 5], phase phi in [0, pi], inputs uniform in [-5, 5].
pub fn sample_sinusoid_task(k_shot: usize, q_query: usize, seed: u64) -> Result<Task> {
    if k_shot == 0 || q_query == 0 {
        return Err(Error::InvalidConfig(
            "k_shot and q_query must be at least 1".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let amplitude = rng.gen_range(SINUSOID_AMPLITUDE.0..=SINUSOID_AMPLITUDE.1);
    let phase = rng.gen_range(0.0..=std::f64::consts::PI);
    let mut draw_split = |shots: usize| -> (Matrix, Matrix) {
        let xs: Vec<f64> = (0..shots)
            .map(|_| rng.gen_range(SINUSOID_INPUT.0..=SINUSOID_INPUT.1))
            .collect();
        let ys: Vec<f64> = xs.iter().map(|&x| amplitude * (x + phase).sin()).collect();
        let x = Matrix::from_vec(shots, 1, xs).expect("generated inputs are finite");
        let y = Matrix::from_vec(shots, 1, ys).expect("generated outputs are finite");
        (x, y)
    };
    let (support_x, support_y) = draw_split(k_shot);
    let (query_x, query_y) = draw_split(q_query);
    Ok(Task {
        support_x,
        support_y: Targets::Values(support_y),
        query_x,
        query_y: Targets::Values(query_y),
        info: TaskInfo {
            family: "sinusoid".into(),
            n_way: 1,
            k_shot,
            q_query,
            seed,
        },
    })
}

/// Which side of the class split to sample episodes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    MetaTrain,
    MetaTest,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::MetaTrain => "meta-train",
            Split::MetaTest => "meta-test",
        }
    }
}

/// How to divide a folder dataset's classes between meta-train and meta-test.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// First `fraction` of the sorted class list (rounded) goes to
    /// meta-train, the rest to meta-test.
    Fraction(f64),
    /// Classes named in the file (one per line, `#` comments allowed) go to
    /// meta-train, the rest to meta-test.
    ClassList(PathBuf),
}

#[derive(Debug)]
struct FolderClass {
    name: String,
    /// Row-vector pixels, one per image, normalized to [0, 1].
    images: Vec<Vec<f64>>,
}

/// In-memory image classification dataset loaded from `root/<class>/<image>.pgm`,
/// with a disjoint class-level split into meta-train and meta-test.
#[derive(Debug)]
pub struct FolderDataset {
    root_label: String,
    classes: Vec<FolderClass>,
    train: Vec<usize>,
    test: Vec<usize>,
    height: usize,
    width: usize,
}

impl FolderDataset {
    pub fn image_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn input_dim(&self) -> usize {
        self.height * self.width
    }

    pub fn class_names(&self, split: Split) -> Vec<&str> {
        self.split_indices(split)
            .iter()
            .map(|&i| self.classes[i].name.as_str())
            .collect()
    }

    /// Comma-free so it can sit in a CSV column without quoting.
    pub fn label(&self, split: Split) -> String {
        format!("folder({};{})", self.root_label, split.label())
    }

    fn split_indices(&self, split: Split) -> &[usize] {
        match split {
            Split::MetaTrain => &self.train,
            Split::MetaTest => &self.test,
        }
    }
}

/// Reads the binary (P5) PGM format: `P5 <width> <height> <maxval>` header
/// tokens with `#`-to-end-of-line comments, one whitespace byte, then
/// big-endian samples (1 byte when maxval < 256, else 2). Pixels are
/// normalized by maxval into [0, 1].
fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |msg: &str| Error::Dataset(format!("{}: {msg}", path.display()));
    let mut pos = 0usize;
    let next_token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos > start {
            Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        } else {
            None
        }
    };
    let magic = next_token(&mut pos).ok_or_else(|| bad("empty file"))?;
    if magic != "P5" {
        return Err(bad(&format!("expected binary PGM magic P5, found {magic:?}")));
    }
    let read_number = |pos: &mut usize, what: &str| -> Result<usize> {
        let tok = next_token(pos).ok_or_else(|| bad(&format!("missing {what}")))?;
        tok.parse::<usize>()
            .map_err(|_| bad(&format!("bad {what} {tok:?}")))
    };
    let width = read_number(&mut pos, "width")?;
    let height = read_number(&mut pos, "height")?;
    let maxval = read_number(&mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(&format!("maxval {maxval} out of range 1..=65535")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing separator before pixel data"));
    }
    pos += 1;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * bytes_per;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(bad(&format!(
            "expected {expected} raster bytes, found {}",
            raster.len()
        )));
    }
    let scale = 1.0 / maxval as f64;
    let mut pixels = Vec::with_capacity(width * height);
    if bytes_per == 1 {
        pixels.extend(raster.iter().map(|&b| b as f64 * scale));
    } else {
        for pair in raster.chunks_exact(2) {
            let v = u16::from_be_bytes([pair[0], pair[1]]);
            pixels.push(v as f64 * scale);
        }
    }
    Ok((width, height, pixels))
}

/// Loads every `root/<class>/*` file as a PGM image and splits classes per
/// `spec`. Classes and files are visited in sorted name order, so loading is
/// deterministic regardless of directory enumeration order.
pub fn load_folder_dataset(root: &Path, spec: &SplitSpec) -> Result<Arc<FolderDataset>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut class_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            class_dirs.push((name, path));
        }
    }
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    if class_dirs.len() < 2 {
        return Err(Error::Dataset(format!(
            "{}: need at least 2 class directories, found {}",
            root.display(),
            class_dirs.len()
        )));
    }
    let mut classes = Vec::with_capacity(class_dirs.len());
    let mut dims: Option<(usize, usize)> = None;
    for (name, dir) in class_dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Dataset(format!(
                "class '{name}' ({}) contains no image files",
                dir.display()
            )));
        }
        let mut images = Vec::with_capacity(files.len());
        for file in files {
            let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let (w, h, pixels) = parse_pgm(&bytes, &file)?;
            match dims {
                None => dims = Some((h, w)),
                Some((dh, dw)) if (h, w) != (dh, dw) => {
                    return Err(Error::Dataset(format!(
                        "{}: image is {h}x{w} but the dataset is {dh}x{dw}; \
                         all images must share one size",
                        file.display()
                    )));
                }
                _ => {}
            }
            images.push(pixels);
        }
        classes.push(FolderClass { name, images });
    }
    let (height, width) = dims.expect("at least two non-empty classes were loaded");

    let train: Vec<usize> = match spec {
        SplitSpec::Fraction(f) => {
            if !f.is_finite() || *f <= 0.0 || *f >= 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "split fraction must lie strictly between 0 and 1, got {f}"
                )));
            }
            let count = (f * classes.len() as f64).round() as usize;
            if count == 0 || count >= classes.len() {
                return Err(Error::InvalidConfig(format!(
                    "split fraction {f} over {} classes leaves one side empty",
                    classes.len()
                )));
            }
            (0..count).collect()
        }
        SplitSpec::ClassList(list_path) => {
            let text =
                std::fs::read_to_string(list_path).map_err(|e| Error::io(list_path, e))?;
            let mut indices = Vec::new();
            for line in text.lines() {
                let name = line.trim();
                if name.is_empty() || name.starts_with('#') {
                    continue;
                }
                let idx = classes
                    .iter()
                    .position(|c| c.name == name)
                    .ok_or_else(|| {
                        Error::Dataset(format!(
                            "split list names unknown class '{name}' (dataset {})",
                            root.display()
                        ))
                    })?;
                if indices.contains(&idx) {
                    return Err(Error::Dataset(format!(
                        "split list names class '{name}' twice"
                    )));
                }
                indices.push(idx);
            }
            indices.sort_unstable();
            if indices.is_empty() || indices.len() == classes.len() {
                return Err(Error::InvalidConfig(
                    "split list leaves meta-train or meta-test empty".into(),
                ));
            }
            indices
        }
    };
    let test: Vec<usize> = (0..classes.len()).filter(|i| !train.contains(i)).collect();
    Ok(Arc::new(FolderDataset {
        root_label: root.display().to_string(),
        classes,
        train,
        test,
        height,
        width,
    }))
}

/// Draws one N-way K-shot episode from a folder dataset split. Support and
/// query images for a class are sampled together without replacement, so they
/// are always disjoint.
pub fn sample_folder_task(
    dataset: &FolderDataset,
    split: Split,
    n_way: usize,
    k_shot: usize,
    q_query: usize,
    seed: u64,
) -> Result<Task> {
    validate_counts(n_way, k_shot, q_query)?;
    let pool = dataset.split_indices(split);
    if pool.len() < n_way {
        return Err(Error::Dataset(format!(
            "{} split has {} classes, but the task needs {n_way}",
            split.label(),
            pool.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let chosen: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), n_way)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    let per_class = k_shot + q_query;
    let mut support_rows = Vec::with_capacity(n_way * k_shot);
    let mut query_rows = Vec::with_capacity(n_way * q_query);
    let mut support_labels = Vec::with_capacity(n_way * k_shot);
    let mut query_labels = Vec::with_capacity(n_way * q_query);
    for (label, &class_idx) in chosen.iter().enumerate() {
        let class = &dataset.classes[class_idx];
        if class.images.len() < per_class {
            return Err(Error::Dataset(format!(
                "class '{}' has {} images, but the task needs {per_class} \
                 ({k_shot} support + {q_query} query)",
                class.name,
                class.images.len()
            )));
        }
        let picks = rand::seq::index::sample(&mut rng, class.images.len(), per_class);
        for (slot, image_idx) in picks.into_iter().enumerate() {
            let row = class.images[image_idx].clone();
            if slot < k_shot {
                support_rows.push(row);
                support_labels.push(label);
            } else {
                query_rows.push(row);
                query_labels.push(label);
            }
        }
    }
    Ok(Task {
        support_x: Matrix::from_rows(&support_rows)?,
        support_y: Targets::Labels(support_labels),
        query_x: Matrix::from_rows(&query_rows)?,
        query_y: Targets::Labels(query_labels),
        info: TaskInfo {
            family: dataset.label(split),
            n_way,
            k_shot,
            q_query,
            seed,
        },
    })
}

/// A source of episodes, uniform across synthetic and folder-backed data.
#[derive(Debug, Clone)]
pub enum TaskFamily {
    Gaussian(GaussianFamily),
    Sinusoid,
    Folder {
        dataset: Arc<FolderDataset>,
        split: Split,
    },
}

impl TaskFamily {
    /// Stable human-readable identifier, recorded alongside evaluation rows.
    pub fn label(&self) -> String {
        match self {
            TaskFamily::Gaussian(f) => f.label(),
            TaskFamily::Sinusoid => "sinusoid".into(),
            TaskFamily::Folder { dataset, split } => dataset.label(*split),
        }
    }

    /// Width of the example rows this family produces.
    pub fn input_dim(&self) -> usize {
        match self {
            TaskFamily::Gaussian(f) => f.dim,
            TaskFamily::Sinusoid => 1,
            TaskFamily::Folder { dataset, .. } => dataset.input_dim(),
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, TaskFamily::Sinusoid)
    }

    /// Draws one episode. `n_way` is ignored by regression families.
    pub fn sample(&self, n_way: usize, k_shot: usize, q_query: usize, seed: u64) -> Result<Task> {
        match self {
            TaskFamily::Gaussian(f) => sample_gaussian_task(f, n_way, k_shot, q_query, seed),
            TaskFamily::Sinusoid => sample_sinusoid_task(k_shot, q_query, seed),
            TaskFamily::Folder { dataset, split } => {
                sample_folder_task(dataset, *split, n_way, k_shot, q_query, seed)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn labels(t: &Targets) -> &[usize] {
        match t {
            Targets::Labels(l) => l,
            Targets::Values(_) => panic!("expected labels"),
        }
    }

    fn values(t: &Targets) -> &Matrix {
        match t {
            Targets::Values(v) => v,
            Targets::Labels(_) => panic!("expected values"),
        }
    }

    #[test]
    fn gaussian_episode_has_the_right_shape_and_label_layout() {
        let family = GaussianFamily::default();
        let task = sample_gaussian_task(&family, 5, 1, 15, 99).unwrap();
        assert_eq!(task.support_x.shape(), (5, 16));
        assert_eq!(task.query_x.shape(), (75, 16));
        // Class-major, episode-local labels: each class exactly k (resp. q)
        // times, in order.
        assert_eq!(labels(&task.support_y), &[0, 1, 2, 3, 4]);
        let q = labels(&task.query_y);
        for class in 0..5 {
            assert_eq!(q.iter().filter(|&&l| l == class).count(), 15);
            assert_eq!(q[class * 15], class);
        }
        assert_eq!(task.info.n_way, 5);
        assert_eq!(task.info.seed, 99);
    }

    #[test]
    fn gaussian_sampling_is_deterministic_in_the_seed() {
        let family = GaussianFamily::default();
        let a = sample_gaussian_task(&family, 3, 2, 4, 7).unwrap();
        let b = sample_gaussian_task(&family, 3, 2, 4, 7).unwrap();
        assert_eq!(a.support_x.max_abs_diff(&b.support_x), 0.0);
        assert_eq!(a.query_x.max_abs_diff(&b.query_x), 0.0);
        let c = sample_gaussian_task(&family, 3, 2, 4, 8).unwrap();
        assert!(a.support_x.max_abs_diff(&c.support_x) > 0.0);
    }

    #[test]
    fn tight_clusters_are_solved_by_nearest_center() {
        // With spread << center distances, assigning each query to the class
        // of the nearest support mean must be perfect.
        let family = GaussianFamily {
            dim: 8,
            center_scale: 3.0,
            spread: 1e-3,
        };
        for seed in 0..20u64 {
            let task = sample_gaussian_task(&family, 5, 5, 10, 1000 + seed).unwrap();
            let sup = labels(&task.support_y);
            let mut means = vec![vec![0.0; 8]; 5];
            let mut counts = vec![0usize; 5];
            for i in 0..task.support_x.rows() {
                counts[sup[i]] += 1;
                for d in 0..8 {
                    means[sup[i]][d] += task.support_x[(i, d)];
                }
            }
            for (m, &c) in means.iter_mut().zip(&counts) {
                for v in m.iter_mut() {
                    *v /= c as f64;
                }
            }
            let q = labels(&task.query_y);
            for i in 0..task.query_x.rows() {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (class, m) in means.iter().enumerate() {
                    let d: f64 = (0..8)
                        .map(|d| (task.query_x[(i, d)] - m[d]).powi(2))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = class;
                    }
                }
                assert_eq!(best, q[i], "seed {seed} query {i}");
            }
        }
    }

    #[test]
    fn gaussian_rejects_degenerate_requests() {
        let family = GaussianFamily::default();
        assert!(sample_gaussian_task(&family, 1, 1, 1, 0).is_err());
        assert!(sample_gaussian_task(&family, 2, 0, 1, 0).is_err());
        assert!(sample_gaussian_task(&family, 2, 1, 0, 0).is_err());
        let bad = GaussianFamily {
            spread: -1.0,
            ..family
        };
        assert!(sample_gaussian_task(&bad, 2, 1, 1, 0).is_err());
    }

    #[test]
    fn sinusoid_episodes_fit_their_generating_curve() {
        // Fit a sinx/cosx basis by least squares on the noise-free support:
        // the fit must be exact, the recovered amplitude must lie in the
        // family range, and the recovered phase must lie in [0, pi]
        // (equivalently the cos coefficient is non-negative).
        for seed in 0..100u64 {
            let task = sample_sinusoid_task(10, 5, 5000 + seed).unwrap();
            let x = &task.support_x;
            let y = values(&task.support_y);
            assert_eq!(x.shape(), (10, 1));
            let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..10 {
                let (sx, cx) = (x[(i, 0)].sin(), x[(i, 0)].cos());
                s11 += sx * sx;
                s12 += sx * cx;
                s22 += cx * cx;
                r1 += y[(i, 0)] * sx;
                r2 += y[(i, 0)] * cx;
            }
            let det = s11 * s22 - s12 * s12;
            let a = (s22 * r1 - s12 * r2) / det;
            let b = (s11 * r2 - s12 * r1) / det;
            let amplitude = a.hypot(b);
            assert!(
                (SINUSOID_AMPLITUDE.0 - 1e-6..=SINUSOID_AMPLITUDE.1 + 1e-6).contains(&amplitude),
                "seed {seed}: amplitude {amplitude}"
            );
            assert!(b >= -1e-9, "seed {seed}: phase outside [0, pi]");
            for i in 0..10 {
                let fit = a * x[(i, 0)].sin() + b * x[(i, 0)].cos();
                assert!((fit - y[(i, 0)]).abs() <= 1e-9 * amplitude.max(1.0));
            }
            // Inputs stay in the family range on both splits.
            for (m, rows) in [(x, 10), (&task.query_x, 5)] {
                for i in 0..rows {
                    assert!((SINUSOID_INPUT.0..=SINUSOID_INPUT.1).contains(&m[(i, 0)]));
                }
            }
        }
    }

    #[test]
    fn sinusoid_sampling_is_deterministic() {
        let a = sample_sinusoid_task(5, 5, 3).unwrap();
        let b = sample_sinusoid_task(5, 5, 3).unwrap();
        assert_eq!(a.support_x.max_abs_diff(&b.support_x), 0.0);
        assert_eq!(
            values(&a.support_y).max_abs_diff(values(&b.support_y)),
            0.0
        );
    }

    // --- folder dataset fixtures -------------------------------------------

    fn write_pgm(path: &Path, w: usize, h: usize, maxval: usize, pixels: &[usize]) {
        assert_eq!(pixels.len(), w * h);
        let mut f = std::fs::File::create(path).unwrap();
        write!(f, "P5\n# fixture image\n{w} {h}\n{maxval}\n").unwrap();
        if maxval < 256 {
            let bytes: Vec<u8> = pixels.iter().map(|&p| p as u8).collect();
            f.write_all(&bytes).unwrap();
        } else {
            let mut bytes = Vec::with_capacity(pixels.len() * 2);
            for &p in pixels {
                bytes.extend_from_slice(&(p as u16).to_be_bytes());
            }
            f.write_all(&bytes).unwrap();
        }
    }

    /// `n_classes` directories of `per_class` 2x2 images whose pixel values
    /// encode (class, image) uniquely.
    fn fixture_dataset(root: &Path, n_classes: usize, per_class: usize) {
        let names = ["alpha", "beta", "delta", "gamma", "omega", "sigma"];
        for (c, name) in names.iter().take(n_classes).enumerate() {
            let dir = root.join(name);
            std::fs::create_dir(&dir).unwrap();
            for i in 0..per_class {
                let v = c * 40 + i * 4;
                write_pgm(
                    &dir.join(format!("img{i}.pgm")),
                    2,
                    2,
                    255,
                    &[v, v + 1, v + 2, v + 3],
                );
            }
        }
    }

    #[test]
    fn folder_loading_sorts_classes_and_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        fixture_dataset(dir.path(), 4, 3);
        let ds = load_folder_dataset(dir.path(), &SplitSpec::Fraction(0.5)).unwrap();
        assert_eq!(ds.image_dims(), (2, 2));
        assert_eq!(ds.input_dim(), 4);
        // Sorted byte order: alpha < beta < delta < gamma.
        assert_eq!(ds.class_names(Split::MetaTrain), vec!["alpha", "beta"]);
        assert_eq!(ds.class_names(Split::MetaTest), vec!["delta", "gamma"]);
        // Pixel (0,0) of beta's first image is 40, normalized by 255.
        assert!((ds.classes[1].images[0][0] - 40.0 / 255.0).abs() <= 1e-15);
    }

    #[test]
    fn folder_supports_sixteen_bit_samples() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a", "b"] {
            let class = dir.path().join(name);
            std::fs::create_dir(&class).unwrap();
            write_pgm(&class.join("x.pgm"), 2, 1, 1000, &[250, 1000]);
        }
        let ds = load_folder_dataset(dir.path(), &SplitSpec::Fraction(0.5)).unwrap();
        assert_eq!(ds.image_dims(), (1, 2));
        assert!((ds.classes[0].images[0][0] - 0.25).abs() <= 1e-15);
        assert!((ds.classes[0].images[0][1] - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn class_list_split_selects_named_classes() {
        let dir = tempfile::tempdir().unwrap();
        fixture_dataset(dir.path(), 4, 3);
        let list = dir.path().join("train-classes.txt");
        std::fs::write(&list, "# meta-train side\ngamma\nalpha\n\n").unwrap();
        let ds = load_folder_dataset(dir.path(), &SplitSpec::ClassList(list)).unwrap();
        assert_eq!(ds.class_names(Split::MetaTrain), vec!["alpha", "gamma"]);
        assert_eq!(ds.class_names(Split::MetaTest), vec!["beta", "delta"]);
    }

    #[test]
    fn folder_loading_rejects_malformed_inputs() {
        // Degenerate split fractions.
        let dir = tempfile::tempdir().unwrap();
        fixture_dataset(dir.path(), 2, 2);
        assert!(load_folder_dataset(dir.path(), &SplitSpec::Fraction(0.9)).is_err());
        assert!(load_folder_dataset(dir.path(), &SplitSpec::Fraction(1.0)).is_err());

        // A non-PGM file is named in the error.
        let dir = tempfile::tempdir().unwrap();
        fixture_dataset(dir.path(), 2, 2);
        let rogue = dir.path().join("alpha").join("broken.pgm");
        std::fs::write(&rogue, b"P2\n2 2\n255\n0 1 2 3\n").unwrap();
        let err = load_folder_dataset(dir.path(), &SplitSpec::Fraction(0.5)).unwrap_err();
        assert!(err.to_string().contains("broken.pgm"), "{err}");

        // Mixed image sizes are rejected.
        let dir = tempfile::tempdir().unwrap();
        fixture_dataset(dir.path(), 2, 2);
        write_pgm(
            &dir.path().join("beta").join("zz-big.pgm"),
            3,
            1,
            255,
            &[1, 2, 3],
        );
        let err = load_folder_dataset(dir.path(), &SplitSpec::Fraction(0.5)).unwrap_err();
        assert!(err.to_string().contains("share one size"), "{err}");

        // Unknown class in a split list.
        let dir = tempfile::tempdir().unwrap();
        fixture_dataset(dir.path(), 2, 2);
        let list = dir.path().join("list.txt");
        std::fs::write(&list, "zeta\n").unwrap();
        let err = load_folder_dataset(dir.path(), &SplitSpec::ClassList(list)).unwrap_err();
        assert!(err.to_string().contains("zeta"), "{err}");

        // Fewer than two classes.
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("only")).unwrap();
        write_pgm(
            &dir.path().join("only").join("x.pgm"),
            1,
            1,
            255,
            &[0],
        );
        assert!(load_folder_dataset(dir.path(), &SplitSpec::Fraction(0.5)).is_err());
    }

    #[test]
    fn folder_episodes_are_disjoint_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        fixture_dataset(dir.path(), 6, 5);
        let ds = load_folder_dataset(dir.path(), &SplitSpec::Fraction(0.5)).unwrap();
        let task = sample_folder_task(&ds, Split::MetaTrain, 2, 2, 2, 11).unwrap();
        assert_eq!(task.support_x.shape(), (4, 4));
        assert_eq!(task.query_x.shape(), (4, 4));
        assert_eq!(labels(&task.support_y), &[0, 0, 1, 1]);
        assert_eq!(labels(&task.query_y), &[0, 0, 1, 1]);
        // Fixture pixels uniquely identify an image, so row-level overlap
        // between support and query would show up as an identical first
        // pixel.
        for i in 0..task.support_x.rows() {
            for j in 0..task.query_x.rows() {
                assert_ne!(
                    task.support_x[(i, 0)].to_bits(),
                    task.query_x[(j, 0)].to_bits(),
                    "support row {i} equals query row {j}"
                );
            }
        }
        let again = sample_folder_task(&ds, Split::MetaTrain, 2, 2, 2, 11).unwrap();
        assert_eq!(task.support_x.max_abs_diff(&again.support_x), 0.0);
        assert_eq!(task.query_x.max_abs_diff(&again.query_x), 0.0);
    }

    #[test]
    fn folder_sampling_reports_capacity_problems_by_name() {
        let dir = tempfile::tempdir().unwrap();
        fixture_dataset(dir.path(), 4, 3);
        let ds = load_folder_dataset(dir.path(), &SplitSpec::Fraction(0.5)).unwrap();
        // Too many ways for a 2-class split.
        let err = sample_folder_task(&ds, Split::MetaTrain, 3, 1, 1, 0).unwrap_err();
        assert!(err.to_string().contains("2 classes"), "{err}");
        // Too many shots for a 3-image class.
        let err = sample_folder_task(&ds, Split::MetaTrain, 2, 2, 2, 0).unwrap_err();
        assert!(err.to_string().contains("3 images"), "{err}");
    }

    #[test]
    fn family_labels_and_dimensions_are_consistent() {
        let g = TaskFamily::Gaussian(GaussianFamily::default());
        assert_eq!(g.label(), "gaussian(dim=16;scale=3;spread=0.5)");
        assert_eq!(g.input_dim(), 16);
        assert!(g.is_classification());
        let s = TaskFamily::Sinusoid;
        assert_eq!(s.label(), "sinusoid");
        assert_eq!(s.input_dim(), 1);
        assert!(!s.is_classification());
        let wide = GaussianFamily::wide();
        assert_eq!(wide.spread, 1.0);
        assert_eq!(wide.dim, 16);
    }
}
