//! A small analytic sprite renderer standing in for a face model.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Length of the intrinsic (shape and texture) vector.
pub const INTRINSIC_DIM: usize = 4;

pub const AZIMUTH_RANGE: (f64, f64) = (-FRAC_PI_2, FRAC_PI_2);
pub const ELEVATION_RANGE: (f64, f64) = (-FRAC_PI_4, FRAC_PI_4);
pub const LIGHT_RANGE: (f64, f64) = (-FRAC_PI_2, FRAC_PI_2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub azimuth: f64,
    pub elevation: f64,
    pub light_azimuth: f64,
    /// `INTRINSIC_DIM` entries in `[0, 1]`.
    pub intrinsic: Tensor,
}

impl SceneParams {
    pub fn new(azimuth: f64, elevation: f64, light_azimuth: f64, intrinsic: Vec<f64>) -> Result<Self> {
        let p = SceneParams {
            azimuth,
            elevation,
            light_azimuth,
            intrinsic: Tensor::vector(intrinsic),
        };
        p.validate()?;
        Ok(p)
    }

    /// Frontal, level, lit from straight ahead, mid-range intrinsics.
    pub fn neutral() -> Self {
        SceneParams {
            azimuth: 0.0,
            elevation: 0.0,
            light_azimuth: 0.0,
            intrinsic: Tensor::vector(vec![0.5; INTRINSIC_DIM]),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        SceneParams {
            azimuth: rng.gen_range(AZIMUTH_RANGE.0..=AZIMUTH_RANGE.1),
            elevation: rng.gen_range(ELEVATION_RANGE.0..=ELEVATION_RANGE.1),
            light_azimuth: rng.gen_range(LIGHT_RANGE.0..=LIGHT_RANGE.1),
            intrinsic: random_intrinsic(rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |v: f64, r: (f64, f64)| v >= r.0 && v <= r.1;
        if !inside(self.azimuth, AZIMUTH_RANGE) {
            return Err(Error::Domain(format!("azimuth {} outside [-pi/2, pi/2]", self.azimuth)));
        }
        if !inside(self.elevation, ELEVATION_RANGE) {
            return Err(Error::Domain(format!("elevation {} outside [-pi/4, pi/4]", self.elevation)));
        }
        if !inside(self.light_azimuth, LIGHT_RANGE) {
            return Err(Error::Domain(format!("light azimuth {} outside [-pi/2, pi/2]", self.light_azimuth)));
        }
        self.intrinsic.expect_vector(INTRINSIC_DIM, "scene intrinsic")?;
        if self.intrinsic.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("intrinsic entries must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn get(&self, t: Transform) -> Option<f64> {
        match t {
            Transform::Azimuth => Some(self.azimuth),
            Transform::Elevation => Some(self.elevation),
            Transform::Light => Some(self.light_azimuth),
            Transform::Intrinsic => None,
        }
    }

    fn set(&mut self, t: Transform, v: f64) {
        match t {
            Transform::Azimuth => self.azimuth = v,
            Transform::Elevation => self.elevation = v,
            Transform::Light => self.light_azimuth = v,
            Transform::Intrinsic => unreachable!("intrinsic is not a scalar"),
        }
    }
}

fn random_intrinsic<R: Rng + ?Sized>(rng: &mut R) -> Tensor {
    Tensor::vector((0..INTRINSIC_DIM).map(|_| rng.gen::<f64>()).collect())
}

/// The factor a clamped batch varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Azimuth,
    Elevation,
    Light,
    Intrinsic,
}

impl Transform {
    pub const ALL: [Transform; 4] = [Transform::Azimuth, Transform::Elevation, Transform::Light, Transform::Intrinsic];
    pub const EXTRINSIC: [Transform; 3] = [Transform::Azimuth, Transform::Elevation, Transform::Light];

    pub fn name(self) -> &'static str {
        match self {
            Transform::Azimuth => "azimuth",
            Transform::Elevation => "elevation",
            Transform::Light => "light",
            Transform::Intrinsic => "intrinsic",
        }
    }

    /// Parameter range for the extrinsic factors; `None` for intrinsic.
    pub fn range(self) -> Option<(f64, f64)> {
        match self {
            Transform::Azimuth => Some(AZIMUTH_RANGE),
            Transform::Elevation => Some(ELEVATION_RANGE),
            Transform::Light => Some(LIGHT_RANGE),
            Transform::Intrinsic => None,
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Transform::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown transform `{s}`")))
    }
}

/// Where each factor lives in the latent code: azimuth at 0, elevation at 1,
/// light at 2, intrinsic block `3..total_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLayout")]
pub struct LatentLayout {
    total_dim: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    total_dim: usize,
}

impl TryFrom<RawLayout> for LatentLayout {
    type Error = Error;

    fn try_from(r: RawLayout) -> Result<Self> {
        LatentLayout::new(r.total_dim)
    }
}

impl Default for LatentLayout {
    fn default() -> Self {
        LatentLayout { total_dim: 16 }
    }
}

impl LatentLayout {
    pub const AZIMUTH: usize = 0;
    pub const ELEVATION: usize = 1;
    pub const LIGHT: usize = 2;

    pub fn new(total_dim: usize) -> Result<Self> {
        if total_dim < 4 {
            return Err(Error::config("layout.total_dim", "must be >= 4"));
        }
        Ok(LatentLayout { total_dim })
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn intrinsic(&self) -> Range<usize> {
        3..self.total_dim
    }

    /// Latent indices trained by a batch that varies `t`.
    pub fn slots(&self, t: Transform) -> Range<usize> {
        match t {
            Transform::Azimuth => 0..1,
            Transform::Elevation => 1..2,
            Transform::Light => 2..3,
            Transform::Intrinsic => self.intrinsic(),
        }
    }
}

/// Renders a `side x side` grayscale image with values in `[0, 1]`.
///
/// The sprite is a large ellipse rotated in-plane by half the azimuth and
/// shifted sideways with it, brighter towards one end of its major axis so
/// that a half turn is visible.
/// Elevation shifts it vertically and flattens it. Half-Lambert shading lights
/// the side facing the light direction. The intrinsic vector sets size,
/// eccentricity, stripe frequency and albedo.
pub fn render_sprite(p: &SceneParams, side: usize) -> Tensor {
    assert!(side >= 8, "sprite side must be at least 8");
    let iv = p.intrinsic.data();
    let e = p.elevation / FRAC_PI_4;
    let major = 0.6 + 0.25 * iv[0];
    let minor = major * (0.45 + 0.3 * iv[1]) * (1.0 + 0.25 * e);
    let freq = 3.0 + 6.0 * iv[2];
    let albedo = 0.6 + 0.4 * iv[3];
    let (cx, cy) = (0.3 * p.azimuth / FRAC_PI_2, 0.3 * e);
    let (st, ct) = (p.azimuth / 2.0).sin_cos();
    let (sl, cl) = p.light_azimuth.sin_cos();
    let soft = 2.0 / side as f64;

    let mut out = vec![0.0; side * side];
    for r in 0..side {
        let y = 1.0 - (2.0 * r as f64 + 1.0) / side as f64;
        for c in 0..side {
            let x = (2.0 * c as f64 + 1.0) / side as f64 - 1.0;
            let (dx, dy) = (x - cx, y - cy);
            let u = ct * dx + st * dy;
            let v = -st * dx + ct * dy;
            let rho = ((u / major).powi(2) + (v / minor).powi(2)).sqrt();
            let cover = ((1.0 - rho) * minor / soft + 0.5).clamp(0.0, 1.0);
            if cover == 0.0 {
                continue;
            }
            let along = (u / major + 1.0) / 2.0;
            let ramp = 0.25 + 0.75 * along.clamp(0.0, 1.0);
            let stripes = 1.0 + 0.15 * (freq * u).sin();
            let facing = if rho > 0.0 { (cl * dx + sl * dy) / dx.hypot(dy) } else { 0.0 };
            let shade = 0.5 + 0.5 * facing * (2.0 * rho).min(1.0);
            out[r * side + c] = (cover * albedo * ramp * stripes * shade * 1.6).clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![side, side], out).expect("side*side pixels")
}

/// A mini-batch in which only `active` changes across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampedBatch {
    pub images: Vec<Tensor>,
    pub scenes: Vec<SceneParams>,
    pub active: Transform,
}

impl ClampedBatch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Flattened `[batch, pixels]` image data.
    pub fn flat(&self) -> Vec<f64> {
        self.images.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

/// Draws one random base scene and varies `active` across `batch_size` copies.
/// Extrinsic values are stratified over the range: one uniform draw inside
/// each of `batch_size` equal cells.
pub fn make_clamped_batch(
    seed: u64,
    active: Transform,
    _layout: &LatentLayout,
    batch_size: usize,
    side: usize,
) -> Result<ClampedBatch> {
    if batch_size < 2 {
        return Err(Error::config("batch_size", "must be >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = SceneParams::random(&mut rng);
    let scenes: Vec<SceneParams> = match active.range() {
        Some((lo, hi)) => {
            let cell = (hi - lo) / batch_size as f64;
            (0..batch_size)
                .map(|k| {
                    let mut s = base.clone();
                    let v = lo + (k as f64 + rng.gen::<f64>()) * cell;
                    s.set(active, v.clamp(lo, hi));
                    s
                })
                .collect()
        }
        None => (0..batch_size)
            .map(|_| SceneParams {
                intrinsic: random_intrinsic(&mut rng),
                ..base.clone()
            })
            .collect(),
    };
    Ok(batch_from_scenes(scenes, active, side))
}

/// Evenly spaced sweep of one extrinsic factor over its closed range, with
/// everything else taken from `base`.
pub fn sweep(base: &SceneParams, active: Transform, n: usize, side: usize) -> Result<ClampedBatch> {
    let (lo, hi) = active
        .range()
        .ok_or_else(|| Error::Usage("sweep needs an extrinsic transform".into()))?;
    if n < 2 {
        return Err(Error::config("n", "must be >= 2"));
    }
    let denom = (n - 1) as f64;
    let scenes = (0..n)
        .map(|k| {
            let mut s = base.clone();
            s.set(active, lo + (hi - lo) * k as f64 / denom);
            s
        })
        .collect();
    Ok(batch_from_scenes(scenes, active, side))
}

fn batch_from_scenes(scenes: Vec<SceneParams>, active: Transform, side: usize) -> ClampedBatch {
    ClampedBatch {
        images: scenes
            .iter()
            .map(|s| {
                let img = render_sprite(s, side);
                Tensor::vector(img.into_data())
            })
            .collect(),
        scenes,
        active,
    }
}
