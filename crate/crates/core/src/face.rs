//! Eigenfaces and Fisherfaces.
//!
//! Faces arrive pre-cropped as fixed-size 8-bit grayscale images (64x64 for
//! the PGM loader). Training runs in three stages:
//!
//! 1. PCA of the mean-centered images via the snapshot method: the
//!    eigen-decomposition of the small `N x N` Gram matrix instead of the
//!    `pixels x pixels` covariance, with the PCA dimension capped at `N - C`
//!    so the within-class scatter stays invertible.
//! 2. LDA in PCA space: the generalized eigenproblem `Sb v = λ Sw v`, solved
//!    by whitening `Sw`, keeping at most `C - 1` directions.
//! 3. Class means and the spread of the training images' distances to their
//!    own class mean, which calibrate [`FaceModel::match_score`].
//!
//! A probe is classified to the class whose mean is nearest in Fisher space.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::fusion::{Modality, ModalityScore};

pub const FACE_WIDTH: usize = 64;
pub const FACE_HEIGHT: usize = 64;

/// Eigenvalues below this fraction of the largest are treated as zero.
const EIGEN_TOLERANCE: f64 = 1e-10;
/// Ridge on the within-class scatter, relative to its average diagonal.
const WITHIN_RIDGE: f64 = 1e-6;
/// Added to the genuine distance spread so a zero spread does not divide by zero.
const CALIBRATION_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FaceError {
    #[error("not a binary PGM: {0}")]
    Format(String),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("image is {width}x{height}, expected {expected_width}x{expected_height}")]
    WrongDimensions {
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("image has {actual} pixels, expected {expected}")]
    PixelCount { expected: usize, actual: usize },
    #[error("need at least {required} images, got {actual}")]
    TooFewImages { required: usize, actual: usize },
    #[error("images do not all have the same size")]
    MixedSizes,
    #[error("requested {requested} components but at most {max} are available")]
    KeepTooLarge { requested: usize, max: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {label:?} has {actual} images, need at least {required}")]
    ClassTooSmall {
        label: String,
        required: usize,
        actual: usize,
    },
    #[error("PCA dimension {dim} exceeds N - C = {max}; reduce the PCA dimension")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("within-class scatter is singular; reduce the PCA dimension")]
    SingularWithinClass,
    #[error("degenerate classes: between-class scatter is zero")]
    DegenerateClasses,
    #[error("no enrolled class {0:?}")]
    UnknownLabel(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl FaceImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, FaceError> {
        if pixels.len() != width * height {
            return Err(FaceError::PixelCount {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.pixels.len(), self.pixels.iter().map(|&p| p as f64))
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Loads a 64x64 binary PGM.
pub fn load_pgm(bytes: &[u8]) -> Result<FaceImage, FaceError> {
    let image = parse_pgm(bytes)?;
    if image.width != FACE_WIDTH || image.height != FACE_HEIGHT {
        return Err(FaceError::WrongDimensions {
            width: image.width,
            height: image.height,
            expected_width: FACE_WIDTH,
            expected_height: FACE_HEIGHT,
        });
    }
    Ok(image)
}

/// Loads a binary PGM of any size.
pub fn parse_pgm(bytes: &[u8]) -> Result<FaceImage, FaceError> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(FaceError::Format(format!(
            "magic is {:?}, expected \"P5\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(FaceError::UnsupportedMaxval(maxval as u32));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(FaceError::Format("missing whitespace after maxval".into())),
    }
    let raster = &bytes[pos..];
    let expected = width * height;
    if raster.len() != expected {
        return Err(FaceError::PixelCount {
            expected,
            actual: raster.len(),
        });
    }
    FaceImage::new(width, height, raster.to_vec())
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], FaceError> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(FaceError::Format("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, FaceError> {
    let token = header_token(bytes, pos)?;
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&n: &usize| n > 0)
        .ok_or_else(|| FaceError::Format(format!("invalid {what} {:?}", String::from_utf8_lossy(token))))
}

/// Principal components of a set of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// One unit-norm component per column.
    pub components: DMatrix<f64>,
    /// Variances along each component (divide-by-N convention), descending.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Snapshot-method PCA of the columns of `data`.
    pub fn fit(data: &DMatrix<f64>, keep: usize) -> Result<Self, FaceError> {
        let (dim, n) = data.shape();
        if n < 2 {
            return Err(FaceError::TooFewImages {
                required: 2,
                actual: n,
            });
        }
        if keep > n - 1 {
            return Err(FaceError::KeepTooLarge {
                requested: keep,
                max: n - 1,
            });
        }
        let mean = data.column_sum() / n as f64;
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let gram = centered.transpose() * &centered;
        let eigen = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
        // Rounding in the centering leaves a residue far below the data's own energy.
        let energy = data.norm_squared();
        let largest = eigen.eigenvalues[order[0]];
        let has_spread = largest > 1e-20 * energy;
        let significant: Vec<usize> = order
            .into_iter()
            .filter(|&i| has_spread && eigen.eigenvalues[i] > EIGEN_TOLERANCE * largest)
            .take(keep)
            .collect();
        if significant.is_empty() && keep > 0 {
            warn!("all training images are identical; the eigenface basis is empty");
        }

        let mut components = DMatrix::zeros(dim, significant.len());
        let mut eigenvalues = Vec::with_capacity(significant.len());
        for (k, &i) in significant.iter().enumerate() {
            let lambda = eigen.eigenvalues[i];
            let u = &centered * eigen.eigenvectors.column(i) / lambda.sqrt();
            components.set_column(k, &u);
            eigenvalues.push(lambda / n as f64);
        }
        Ok(Self {
            mean,
            components,
            eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    /// Keeps only the leading `keep` components.
    pub fn truncate(&mut self, keep: usize) {
        if keep < self.dim() {
            self.components = self.components.columns(0, keep).into_owned();
            self.eigenvalues.truncate(keep);
        }
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.components.tr_mul(&(x - &self.mean))
    }

    pub fn reconstruct(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.components * coords
    }
}

fn images_to_matrix(images: &[&FaceImage]) -> Result<DMatrix<f64>, FaceError> {
    let first = images.first().ok_or(FaceError::TooFewImages {
        required: 2,
        actual: 0,
    })?;
    if images
        .iter()
        .any(|im| im.width != first.width || im.height != first.height)
    {
        return Err(FaceError::MixedSizes);
    }
    let cols: Vec<DVector<f64>> = images.iter().map(|im| im.to_vector()).collect();
    Ok(DMatrix::from_columns(&cols))
}

/// Eigenfaces of a training set.
pub fn train_pca(images: &[FaceImage], keep: usize) -> Result<Pca, FaceError> {
    let refs: Vec<&FaceImage> = images.iter().collect();
    Pca::fit(&images_to_matrix(&refs)?, keep)
}

/// Fisher directions in PCA space (one per column) and their eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherBasis {
    pub basis: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

/// LDA over per-class lists of PCA-space vectors.
pub fn train_lda(classes: &[Vec<DVector<f64>>]) -> Result<FisherBasis, FaceError> {
    let c = classes.len();
    if c < 2 {
        return Err(FaceError::TooFewClasses(c));
    }
    for (i, class) in classes.iter().enumerate() {
        if class.len() < 2 {
            return Err(FaceError::ClassTooSmall {
                label: format!("#{i}"),
                required: 2,
                actual: class.len(),
            });
        }
    }
    let dim = classes[0][0].len();
    let n: usize = classes.iter().map(Vec::len).sum();
    if dim > n - c {
        return Err(FaceError::DimensionTooLarge { dim, max: n - c });
    }
    if dim == 0 {
        return Err(FaceError::DegenerateClasses);
    }

    let means: Vec<DVector<f64>> = classes
        .iter()
        .map(|class| class.iter().fold(DVector::zeros(dim), |acc, x| acc + x) / class.len() as f64)
        .collect();
    let overall = classes
        .iter()
        .flatten()
        .fold(DVector::zeros(dim), |acc, x| acc + x)
        / n as f64;

    let mut within = DMatrix::zeros(dim, dim);
    let mut between = DMatrix::zeros(dim, dim);
    for (class, mean) in classes.iter().zip(&means) {
        for x in class {
            let d = x - mean;
            within.ger(1.0, &d, &d, 1.0);
        }
        let d = mean - &overall;
        between.ger(class.len() as f64, &d, &d, 1.0);
    }
    let ridge = WITHIN_RIDGE * within.trace() / dim as f64;
    for i in 0..dim {
        within[(i, i)] += ridge;
    }

    // Whitening transform W with W^T Sw W = I.
    let sw = SymmetricEigen::new(within);
    let sw_max = sw.eigenvalues.max();
    if !(sw_max > 0.0) || sw.eigenvalues.min() <= EIGEN_TOLERANCE * sw_max {
        return Err(FaceError::SingularWithinClass);
    }
    let mut whiten = sw.eigenvectors.clone();
    for (k, mut col) in whiten.column_iter_mut().enumerate() {
        col /= sw.eigenvalues[k].sqrt();
    }
    let mut reduced = whiten.transpose() * between * &whiten;
    reduced = (&reduced + reduced.transpose()) * 0.5;
    let eig = SymmetricEigen::new(reduced);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    // Eigenvalues are between/within variance ratios, so an absolute cut-off is meaningful.
    if !(largest > 1e-12) {
        return Err(FaceError::DegenerateClasses);
    }
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > EIGEN_TOLERANCE * largest)
        .take(c - 1)
        .collect();
    let mut basis = DMatrix::zeros(dim, kept.len());
    let mut eigenvalues = Vec::with_capacity(kept.len());
    for (k, &i) in kept.iter().enumerate() {
        basis.set_column(k, &(&whiten * eig.eigenvectors.column(i)));
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok(FisherBasis { basis, eigenvalues })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceConfig {
    /// Fixed PCA dimension. When unset, the smallest dimension retaining
    /// `variance_retained` of the variance is used, but never fewer than
    /// `C - 1` components. Either way it is capped at `N - C`.
    pub pca_components: Option<usize>,
    pub variance_retained: f64,
    pub min_images_per_class: usize,
}

impl Default for FaceConfig {
    fn default() -> Self {
        Self {
            pca_components: None,
            variance_retained: 0.95,
            min_images_per_class: 4,
        }
    }
}

/// Number of leading eigenvalues whose sum reaches `fraction` of the total.
fn components_for_variance(eigenvalues: &[f64], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    for (i, v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc >= fraction * total {
            return i + 1;
        }
    }
    eigenvalues.len()
}

/// A trained face recognizer.
///
/// With a single enrolled class there is nothing to discriminate, so the
/// Fisher stage is skipped and distances are measured in eigenface space.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceModel {
    pub width: usize,
    pub height: usize,
    pub pca: Pca,
    pub fisher: Option<FisherBasis>,
    /// Sorted ascending.
    pub class_labels: Vec<String>,
    pub class_means: Vec<DVector<f64>>,
    pub genuine_dist_mean: f64,
    pub genuine_dist_std: f64,
    /// Training projections with their class index, in input order.
    pub training_projections: Vec<(usize, DVector<f64>)>,
}

impl FaceModel {
    pub fn fit(labeled: &[(String, FaceImage)], config: &FaceConfig) -> Result<Self, FaceError> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, (label, _)) in labeled.iter().enumerate() {
            groups.entry(label.as_str()).or_default().push(i);
        }
        let min = config.min_images_per_class.max(2);
        for (label, idx) in &groups {
            if idx.len() < min {
                return Err(FaceError::ClassTooSmall {
                    label: label.to_string(),
                    required: min,
                    actual: idx.len(),
                });
            }
        }
        let class_labels: Vec<String> = groups.keys().map(|s| s.to_string()).collect();
        let class_of = |label: &str| class_labels.binary_search_by(|l| l.as_str().cmp(label)).expect("grouped");
        let n = labeled.len();
        let c = class_labels.len();
        if c == 0 {
            return Err(FaceError::TooFewImages {
                required: min,
                actual: 0,
            });
        }
        let images: Vec<&FaceImage> = labeled.iter().map(|(_, im)| im).collect();
        let data = images_to_matrix(&images)?;

        let cap = if c >= 2 { n - c } else { n - 1 };
        let mut pca = Pca::fit(&data, n - 1)?;
        let keep = match config.pca_components {
            Some(k) => k.min(cap),
            None => components_for_variance(&pca.eigenvalues, config.variance_retained)
                .max(c - 1)
                .min(cap),
        };
        pca.truncate(keep);
        let pca_coords: Vec<DVector<f64>> = data.column_iter().map(|col| pca.project(&col.into_owned())).collect();

        let fisher = if c >= 2 {
            let mut per_class: Vec<Vec<DVector<f64>>> = vec![Vec::new(); c];
            for ((label, _), coords) in labeled.iter().zip(&pca_coords) {
                per_class[class_of(label)].push(coords.clone());
            }
            Some(train_lda(&per_class)?)
        } else {
            None
        };

        let to_space = |coords: &DVector<f64>| match &fisher {
            Some(f) => f.basis.tr_mul(coords),
            None => coords.clone(),
        };
        let training_projections: Vec<(usize, DVector<f64>)> = labeled
            .iter()
            .zip(&pca_coords)
            .map(|((label, _), coords)| (class_of(label), to_space(coords)))
            .collect();
        let space_dim = training_projections[0].1.len();
        let mut sums = vec![DVector::zeros(space_dim); c];
        let mut counts = vec![0usize; c];
        for (class, v) in &training_projections {
            sums[*class] += v;
            counts[*class] += 1;
        }
        let class_means: Vec<DVector<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &k)| s / k as f64)
            .collect();
        let distances: Vec<f64> = training_projections
            .iter()
            .map(|(class, v)| (v - &class_means[*class]).norm())
            .collect();
        let (genuine_dist_mean, genuine_dist_std) = crate::hmm::mean_std(&distances);

        Ok(Self {
            width: images[0].width,
            height: images[0].height,
            pca,
            fisher,
            class_labels,
            class_means,
            genuine_dist_mean,
            genuine_dist_std,
            training_projections,
        })
    }

    pub fn fisher_dim(&self) -> usize {
        self.class_means.first().map_or(0, |m| m.len())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    fn check_size(&self, image: &FaceImage) -> Result<(), FaceError> {
        if image.width != self.width || image.height != self.height {
            return Err(FaceError::WrongDimensions {
                width: image.width,
                height: image.height,
                expected_width: self.width,
                expected_height: self.height,
            });
        }
        Ok(())
    }

    /// Pixels to Fisher-space coordinates.
    pub fn project(&self, image: &FaceImage) -> Result<DVector<f64>, FaceError> {
        self.check_size(image)?;
        Ok(self.project_pca(&self.pca.project(&image.to_vector())))
    }

    pub fn project_pca(&self, coords: &DVector<f64>) -> DVector<f64> {
        match &self.fisher {
            Some(f) => f.basis.tr_mul(coords),
            None => coords.clone(),
        }
    }

    /// Nearest class mean to a Fisher-space vector; ties go to the smaller label.
    pub fn classify_projection(&self, v: &DVector<f64>) -> (&str, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, mean) in self.class_means.iter().enumerate() {
            let d = (v - mean).norm();
            if d < best.1 {
                best = (i, d);
            }
        }
        (&self.class_labels[best.0], best.1)
    }

    pub fn classify(&self, image: &FaceImage) -> Result<(String, f64), FaceError> {
        let v = self.project(image)?;
        let (label, d) = self.classify_projection(&v);
        Ok((label.to_string(), d))
    }

    /// Fisher-space distance from the probe to the claimed class mean.
    pub fn distance_to(&self, image: &FaceImage, claimed: &str) -> Result<f64, FaceError> {
        let idx = self
            .class_index(claimed)
            .ok_or_else(|| FaceError::UnknownLabel(claimed.to_string()))?;
        Ok((self.project(image)? - &self.class_means[idx]).norm())
    }

    /// Maps a distance to the claimed class mean to a calibrated score.
    ///
    /// `p_true = exp(-max(0, d - μ) / (σ + ε))` over the genuine training
    /// distances, floored at the smallest positive `f64`; `p_false = 1 - p_true`.
    pub fn calibrate_distance(&self, distance: f64) -> ModalityScore {
        let excess = (distance - self.genuine_dist_mean) / (self.genuine_dist_std + CALIBRATION_EPSILON);
        let mut score = ModalityScore::from_excess(excess, Modality::Face);
        score.p_true = score.p_true.max(f64::MIN_POSITIVE);
        score.p_false = 1.0 - score.p_true;
        score
    }

    pub fn match_score(&self, image: &FaceImage, claimed: &str) -> Result<ModalityScore, FaceError> {
        Ok(self.calibrate_distance(self.distance_to(image, claimed)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.width as u32).u32(self.height as u32);
        write_matrix(&mut w, &DMatrix::from_column_slice(self.pca.mean.len(), 1, self.pca.mean.as_slice()));
        write_matrix(&mut w, &self.pca.components);
        w.f64s(&self.pca.eigenvalues);
        match &self.fisher {
            Some(f) => {
                w.u8(1);
                write_matrix(&mut w, &f.basis);
                w.f64s(&f.eigenvalues);
            }
            None => {
                w.u8(0);
            }
        }
        w.u32(self.class_labels.len() as u32);
        for (label, mean) in self.class_labels.iter().zip(&self.class_means) {
            w.str(label);
            w.f64s(mean.as_slice());
        }
        w.f64(self.genuine_dist_mean).f64(self.genuine_dist_std);
        w.u32(self.training_projections.len() as u32);
        for (class, v) in &self.training_projections {
            w.u32(*class as u32);
            w.f64s(v.as_slice());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FaceError> {
        let mut r = Reader::new(bytes);
        let width = r.u32("width")? as usize;
        let height = r.u32("height")? as usize;
        let mean_m = read_matrix(&mut r)?;
        let mean = DVector::from_column_slice(mean_m.as_slice());
        let components = read_matrix(&mut r)?;
        let pca_eigenvalues = r.f64s("pca eigenvalues")?;
        let fisher = match r.u8("fisher flag")? {
            0 => None,
            _ => Some(FisherBasis {
                basis: read_matrix(&mut r)?,
                eigenvalues: r.f64s("fisher eigenvalues")?,
            }),
        };
        let classes = r.u32("class count")? as usize;
        let mut class_labels = Vec::with_capacity(classes);
        let mut class_means = Vec::with_capacity(classes);
        for _ in 0..classes {
            class_labels.push(r.string("class label")?);
            class_means.push(DVector::from_vec(r.f64s("class mean")?));
        }
        let genuine_dist_mean = r.f64("genuine mean")?;
        let genuine_dist_std = r.f64("genuine std")?;
        let count = r.u32("projection count")? as usize;
        let mut training_projections = Vec::with_capacity(count.min(r.remaining()));
        for _ in 0..count {
            let class = r.u32("projection class")? as usize;
            training_projections.push((class, DVector::from_vec(r.f64s("projection")?)));
        }
        Ok(Self {
            width,
            height,
            pca: Pca {
                mean,
                components,
                eigenvalues: pca_eigenvalues,
            },
            fisher,
            class_labels,
            class_means,
            genuine_dist_mean,
            genuine_dist_std,
            training_projections,
        })
    }
}

fn write_matrix(w: &mut Writer, m: &DMatrix<f64>) {
    w.u32(m.nrows() as u32).u32(m.ncols() as u32);
    w.f64s(m.as_slice());
}

fn read_matrix(r: &mut Reader<'_>) -> Result<DMatrix<f64>, FaceError> {
    let rows = r.u32("matrix rows")? as usize;
    let cols = r.u32("matrix cols")? as usize;
    let data = r.f64s("matrix data")?;
    if data.len() != rows * cols {
        return Err(FaceError::Decode(DecodeError {
            offset: 0,
            what: "matrix shape",
        }));
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

/// Nearest-class identification; see [`FaceModel::classify`].
pub fn classify(model: &FaceModel, image: &FaceImage) -> Result<(String, f64), FaceError> {
    model.classify(image)
}

/// Verification score against a claimed identity; see [`FaceModel::match_score`].
pub fn face_match_score(model: &FaceModel, image: &FaceImage, claimed: &str) -> Result<ModalityScore, FaceError> {
    model.match_score(image, claimed)
}

pub fn project(model: &FaceModel, image: &FaceImage) -> Result<DVector<f64>, FaceError> {
    model.project(image)
}
