//! Synthetic cup-drawing data.
//!
//! A flat quarter blank is deformed by a handful of smooth, parameter-driven
//! modes (draw depth, draw-in, earing, wall tilt, springback flare and two
//! small perturbation fields) plus a discontinuous tear that switches on when
//! a damage indicator crosses a threshold. Every constant lives in
//! [`GeneratorConfig`]; none of them has physical meaning.
//!
//! Randomness for sample `i` comes from a ChaCha8 stream seeded with the
//! master seed and selected by `set_stream(i)`, so samples can be generated in
//! any order and still produce the same dataset.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_distances, Mesh};

/// Number of simulation parameters the deformation model consumes.
pub const PARAM_COUNT: usize = 9;

/// Quality class of a drawn cup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Good,
    Defect,
    Cracked,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Good, Label::Defect, Label::Cracked];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Good => "good",
            Label::Defect => "defect",
            Label::Cracked => "cracked",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "good" => Ok(Label::Good),
            "defect" => Ok(Label::Defect),
            "cracked" => Ok(Label::Cracked),
            other => Err(Error::InvalidInput(format!("unknown label `{other}`"))),
        }
    }
}

/// All generator constants. Defaults are tuned so that roughly 40% of the
/// samples are good, 51% defect and 9% cracked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub radial_count: usize,
    pub angular_count: usize,
    pub outer_radius: f64,
    /// Sampling interval `[lo, hi]` of each of the nine parameters.
    pub intervals: Vec<[f64; 2]>,
    /// Radius below which the blank stays on the punch face.
    pub punch_radius: f64,
    /// Radial width of the transition from punch face to full wall height.
    pub wall_width: f64,
    pub draw_depth_gain: f64,
    pub draw_in_gain: f64,
    pub earing_gain: f64,
    pub wall_tilt_gain: f64,
    pub flare_gain: f64,
    pub ripple_gain: f64,
    pub waviness_gain: f64,
    /// Tear switches on when `p6 + p7 * p1` exceeds this value.
    pub crack_threshold: f64,
    /// Tear amplitude at the threshold.
    pub crack_jump: f64,
    /// Additional tear amplitude per unit of damage indicator above the threshold.
    pub crack_gain: f64,
    /// Angular half-width (radians) of the torn sector, centred on 45 degrees.
    pub crack_half_width: f64,
    /// Normalized radius where the tear starts.
    pub crack_inner_radius: f64,
    /// Max point deviation from the nominal cup still counted as good.
    pub t_good: f64,
    /// Max point deviation above which a cup is cracked.
    pub t_crack: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            radial_count: 21,
            angular_count: 10,
            outer_radius: 50.0,
            intervals: vec![[0.0, 1.0]; PARAM_COUNT],
            punch_radius: 20.0,
            wall_width: 20.0,
            draw_depth_gain: 5.5,
            draw_in_gain: 4.0,
            earing_gain: 1.0,
            wall_tilt_gain: 1.0,
            flare_gain: 2.0,
            ripple_gain: 1.0,
            waviness_gain: 1.0,
            crack_threshold: 1.25,
            crack_jump: 15.0,
            crack_gain: 10.0,
            crack_half_width: 0.3,
            crack_inner_radius: 0.6,
            t_good: 2.0,
            t_crack: 10.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.intervals.len() != PARAM_COUNT {
            return Err(Error::InvalidInput(format!(
                "expected {PARAM_COUNT} parameter intervals, got {}",
                self.intervals.len()
            )));
        }
        for (i, [lo, hi]) in self.intervals.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::InvalidInput(format!("parameter {} interval [{lo}, {hi}] is degenerate", i + 1)));
            }
        }
        if !(self.outer_radius > 0.0 && self.wall_width > 0.0) {
            return Err(Error::InvalidInput("outer_radius and wall_width must be positive".into()));
        }
        if !(self.crack_half_width > 0.0 && self.crack_inner_radius < 1.0) {
            return Err(Error::InvalidInput("crack sector is empty".into()));
        }
        if !(0.0 < self.t_good && self.t_good < self.t_crack) {
            return Err(Error::InvalidInput(format!(
                "need 0 < t_good < t_crack, got {} and {}",
                self.t_good, self.t_crack
            )));
        }
        Ok(())
    }

    /// Midpoint of every interval; the nominal process setting.
    pub fn nominal_params(&self) -> SimParams {
        SimParams(self.intervals.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect())
    }

    /// Lipschitz constant of `deform` (outside crack-mode crossings) with
    /// respect to the Euclidean norm of the parameter vector, for a mesh of
    /// `m` points.
    pub fn lipschitz_bound(&self, m: usize) -> f64 {
        let radial = [self.draw_in_gain, self.wall_tilt_gain, self.flare_gain, self.ripple_gain];
        let axial = [self.draw_depth_gain, self.earing_gain, self.waviness_gain];
        let sq: f64 = radial.iter().chain(&axial).map(|g| g * g).sum();
        (m as f64 * sq).sqrt()
    }

    /// Damage indicator `g(p) = p6 + p7 * p1`.
    pub fn damage(&self, p: &SimParams) -> f64 {
        p.0[5] + p.0[6] * p.0[0]
    }
}

/// Simulation parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams(pub Vec<f64>);

impl SimParams {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One simulated cup.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub params: SimParams,
    pub coords: Vec<f64>,
    pub label: Label,
}

/// Flat quarter-disc grid in the z = 0 plane, ordered radial-major with the
/// centre point first.
pub fn generate_base_mesh(radial_count: usize, angular_count: usize, outer_radius: f64) -> Result<Mesh> {
    if radial_count < 2 || angular_count < 2 {
        return Err(Error::InvalidInput(format!(
            "need radial_count >= 2 and angular_count >= 2, got {radial_count} and {angular_count}"
        )));
    }
    if !(outer_radius > 0.0 && outer_radius.is_finite()) {
        return Err(Error::InvalidInput(format!("outer_radius must be positive, got {outer_radius}")));
    }
    let mut points = Vec::with_capacity((radial_count - 1) * angular_count + 1);
    points.push([0.0, 0.0, 0.0]);
    for a in 1..radial_count {
        let r = outer_radius * a as f64 / (radial_count - 1) as f64;
        for b in 0..angular_count {
            let theta = FRAC_PI_2 * b as f64 / (angular_count - 1) as f64;
            // exact axes at the quarter edges
            let (x, y) = match b {
                0 => (r, 0.0),
                _ if b == angular_count - 1 => (0.0, r),
                _ => (r * theta.cos(), r * theta.sin()),
            };
            points.push([x, y, 0.0]);
        }
    }
    Mesh::new(points)
}

/// Deforms the flat blank according to `params`. Bit-deterministic.
pub fn deform(base: &Mesh, params: &SimParams, cfg: &GeneratorConfig) -> Result<Vec<f64>> {
    let p = params.as_slice();
    if p.len() != PARAM_COUNT {
        return Err(Error::Dimension {
            context: "deform parameters",
            expected: PARAM_COUNT,
            actual: p.len(),
        });
    }
    let m = base.len();
    let mut out = base.to_flat();
    let cracked = cfg.damage(params) > cfg.crack_threshold;
    let tear = cfg.crack_jump + cfg.crack_gain * (cfg.damage(params) - cfg.crack_threshold);

    for (i, pt) in base.points().iter().enumerate() {
        let [x, y, z] = *pt;
        let r = x.hypot(y);
        let u = r / cfg.outer_radius;
        let theta = y.atan2(x);
        let wall = ((r - cfg.punch_radius) / cfg.wall_width).clamp(0.0, 1.0);

        let dr = -cfg.draw_in_gain * p[1] * u * u
            + cfg.wall_tilt_gain * p[3] * wall
            + cfg.flare_gain * p[4] * u * u * u * wall
            + cfg.ripple_gain * p[8] * (2.0 * PI * u).sin() * u;
        let mut dz = cfg.draw_depth_gain * p[0] * wall
            + cfg.earing_gain * p[2] * (4.0 * theta).cos() * u.powi(4)
            + cfg.waviness_gain * p[7] * (PI * u).sin() * (2.0 * theta).cos();
        if cracked {
            let angular = 1.0 - ((theta - FRAC_PI_4) / cfg.crack_half_width).powi(2);
            let radial = ((u - cfg.crack_inner_radius) / (1.0 - cfg.crack_inner_radius)).clamp(0.0, 1.0);
            dz += tear * angular.max(0.0) * radial;
        }

        if r > 0.0 {
            let scale = (r + dr) / r;
            out[i] = x * scale;
            out[m + i] = y * scale;
        }
        out[2 * m + i] = z + dz;
    }
    Ok(out)
}

/// Labels a cup by its largest point deviation from `reference`:
/// good if `<= t_good`, cracked if `> t_crack`, defect otherwise.
pub fn classify(coords: &[f64], reference: &Mesh, t_good: f64, t_crack: f64) -> Result<Label> {
    if !(0.0 < t_good && t_good < t_crack) {
        return Err(Error::InvalidInput(format!(
            "need 0 < t_good < t_crack, got {t_good} and {t_crack}"
        )));
    }
    let delta = point_distances(coords, reference)?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(if delta <= t_good {
        Label::Good
    } else if delta > t_crack {
        Label::Cracked
    } else {
        Label::Defect
    })
}

/// Draws the parameters of sample `index` for a given master seed.
pub fn draw_params(cfg: &GeneratorConfig, seed: u64, index: u64) -> SimParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    SimParams(
        cfg.intervals
            .iter()
            .map(|&[lo, hi]| {
                let u: f64 = rng.gen();
                lo + (hi - lo) * u
            })
            .collect(),
    )
}

/// Generated dataset together with everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub base_mesh: Mesh,
    pub config: GeneratorConfig,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Input dimension `k`.
    pub fn k(&self) -> usize {
        PARAM_COUNT
    }

    /// Points per segment `m`.
    pub fn m(&self) -> usize {
        self.base_mesh.len()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Sample counts in [`Label::ALL`] order.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    /// Writes `meta.json`, `params.csv`, `coords.csv`, `labels.csv` and `mesh.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let counts = self.class_counts();
        let meta = DatasetMeta {
            k: self.k(),
            m: self.m(),
            d: 3 * self.m(),
            n: self.len(),
            seed: self.seed,
            class_counts: ClassCounts {
                good: counts[0],
                defect: counts[1],
                cracked: counts[2],
            },
            generator_config: self.config.clone(),
            note: "synthetic data; all generator constants are invented and carry no physical meaning".into(),
        };
        let meta_path = dir.join("meta.json");
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")
            .map_err(|e| Error::io(&meta_path, e))?;

        let k = self.k();
        let m = self.m();
        write_rows(
            &dir.join("params.csv"),
            (1..=k).map(|i| format!("p{i}")),
            self.samples.iter().map(|s| s.params.as_slice()),
        )?;
        let coord_header = ["x", "y", "z"]
            .into_iter()
            .flat_map(|axis| (0..m).map(move |i| format!("{axis}{i}")));
        write_rows(
            &dir.join("coords.csv"),
            coord_header,
            self.samples.iter().map(|s| s.coords.as_slice()),
        )?;
        let mut labels = String::from("label\n");
        for s in &self.samples {
            labels.push_str(s.label.as_str());
            labels.push('\n');
        }
        let labels_path = dir.join("labels.csv");
        std::fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;
        self.base_mesh.write_csv(&dir.join("mesh.csv"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        meta.generator_config.validate()?;
        let base_mesh = Mesh::read_csv(&dir.join("mesh.csv"))?;
        if base_mesh.len() != meta.m || meta.d != 3 * meta.m || meta.k != PARAM_COUNT {
            return Err(Error::format(&meta_path, "k/m/d disagree with mesh.csv"));
        }
        let params = read_rows(&dir.join("params.csv"), meta.k)?;
        let coords = read_rows(&dir.join("coords.csv"), meta.d)?;
        let labels_path = dir.join("labels.csv");
        let mut reader = csv::Reader::from_path(&labels_path)?;
        let labels = reader
            .records()
            .map(|r| r.map_err(Error::from).and_then(|r| r.get(0).unwrap_or("").parse::<Label>()))
            .collect::<Result<Vec<_>>>()?;
        if params.len() != meta.n || coords.len() != meta.n || labels.len() != meta.n {
            return Err(Error::format(dir, format!("expected {} rows in every table", meta.n)));
        }
        let samples = params
            .into_iter()
            .zip(coords)
            .zip(labels)
            .map(|((p, c), label)| Sample {
                params: SimParams(p),
                coords: c,
                label,
            })
            .collect();
        Ok(Self {
            samples,
            base_mesh,
            config: meta.generator_config,
            seed: meta.seed,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassCounts {
    good: usize,
    defect: usize,
    cracked: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    k: usize,
    m: usize,
    d: usize,
    n: usize,
    seed: u64,
    class_counts: ClassCounts,
    generator_config: GeneratorConfig,
    note: String,
}

fn write_rows<'a>(
    path: &Path,
    header: impl Iterator<Item = String>,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(Error::format(path, format!("row {n} has {} fields, expected {width}", record.len())));
        }
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::format(path, format!("row {n}: bad number `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Generates `n` samples. Labels are assigned against the nominal cup
/// (base mesh deformed with mid-interval parameters).
pub fn sample_dataset(cfg: &GeneratorConfig, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidInput("dataset size must be >= 1".into()));
    }
    cfg.validate()?;
    let base_mesh = generate_base_mesh(cfg.radial_count, cfg.angular_count, cfg.outer_radius)?;
    let reference = Mesh::from_flat(&deform(&base_mesh, &cfg.nominal_params(), cfg)?)?;
    let samples = (0..n as u64)
        .map(|i| {
            let params = draw_params(cfg, seed, i);
            let coords = deform(&base_mesh, &params, cfg)?;
            let label = classify(&coords, &reference, cfg.t_good, cfg.t_crack)?;
            Ok(Sample { params, coords, label })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        base_mesh,
        config: cfg.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_mesh_corners() {
        let mesh = generate_base_mesh(2, 2, 1.0).unwrap();
        assert_eq!(mesh.points(), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn base_mesh_outer_ring() {
        let mesh = generate_base_mesh(3, 2, 2.0).unwrap();
        assert_eq!(mesh.len(), 5);
        assert_eq!(mesh.points()[1], [1.0, 0.0, 0.0]);
        assert_eq!(mesh.points()[3], [2.0, 0.0, 0.0]);
        assert_eq!(mesh.points()[4], [0.0, 2.0, 0.0]);
        let mesh = generate_base_mesh(5, 7, 3.0).unwrap();
        assert_eq!(mesh.len(), 4 * 7 + 1);
        assert!(mesh.points().iter().all(|p| p[0] >= 0.0 && p[1] >= 0.0 && p[2] == 0.0));
    }

    #[test]
    fn base_mesh_rejects_small_counts() {
        assert!(generate_base_mesh(1, 5, 1.0).is_err());
        assert!(generate_base_mesh(5, 1, 1.0).is_err());
        assert!(generate_base_mesh(5, 5, 0.0).is_err());
    }

    #[test]
    fn zero_params_are_identity() {
        let cfg = GeneratorConfig {
            intervals: vec![[0.0, 0.0]; PARAM_COUNT],
            ..Default::default()
        };
        let base = generate_base_mesh(6, 5, 50.0).unwrap();
        let p = draw_params(&cfg, 3, 0);
        assert!(p.0.iter().all(|&v| v == 0.0));
        assert_eq!(deform(&base, &p, &cfg).unwrap(), base.to_flat());
    }

    #[test]
    fn draw_depth_only_moves_z() {
        let cfg = GeneratorConfig::default();
        let base = generate_base_mesh(cfg.radial_count, cfg.angular_count, cfg.outer_radius).unwrap();
        let mut p = vec![0.0; PARAM_COUNT];
        p[0] = 0.7;
        let coords = deform(&base, &SimParams(p), &cfg).unwrap();
        let m = base.len();
        let flat = base.to_flat();
        assert_eq!(coords[..2 * m], flat[..2 * m]);
        assert!(coords[2 * m..].iter().any(|&z| z != 0.0));
    }

    fn tiny_config() -> GeneratorConfig {
        GeneratorConfig {
            outer_radius: 1.0,
            punch_radius: 0.4,
            wall_width: 0.4,
            ..Default::default()
        }
    }

    #[test]
    fn deform_golden_tiny_mesh() {
        let cfg = tiny_config();
        let base = generate_base_mesh(2, 2, 1.0).unwrap();
        let p = SimParams(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        let coords = deform(&base, &p, &cfg).unwrap();
        let bits: Vec<u64> = coords.iter().map(|v| v.to_bits()).collect();
        let pinned: [u64; 9] = [
            0x0000000000000000,
            0x3ff9999999999998,
            0x0000000000000000,
            0x0000000000000000,
            0x0000000000000000,
            0x3ff9999999999998,
            0x0000000000000000,
            0x3feb333333333335,
            0x3feb333333333333,
        ];
        assert_eq!(bits, pinned);
    }

    #[test]
    fn deform_rejects_bad_dimension() {
        let base = generate_base_mesh(2, 2, 1.0).unwrap();
        assert!(deform(&base, &SimParams(vec![0.0; 3]), &GeneratorConfig::default()).is_err());
    }

    #[test]
    fn classify_thresholds() {
        let reference = generate_base_mesh(3, 3, 10.0).unwrap();
        let flat = reference.to_flat();
        let m = reference.len();
        assert_eq!(classify(&flat, &reference, 2.0, 10.0).unwrap(), Label::Good);

        let mut moved = flat.clone();
        moved[2 * m + 1] += 11.0;
        assert_eq!(classify(&moved, &reference, 2.0, 10.0).unwrap(), Label::Cracked);

        let mut edge = flat.clone();
        edge[2 * m + 3] += 2.0;
        assert_eq!(classify(&edge, &reference, 2.0, 10.0).unwrap(), Label::Good);
        edge[2 * m + 3] += 1.0;
        assert_eq!(classify(&edge, &reference, 2.0, 10.0).unwrap(), Label::Defect);

        assert!(classify(&flat, &reference, 3.0, 2.0).is_err());
        assert!(classify(&flat[1..], &reference, 2.0, 10.0).is_err());
    }

    #[test]
    fn single_sample_is_composition() {
        let cfg = GeneratorConfig::default();
        let ds = sample_dataset(&cfg, 1, 42).unwrap();
        let p = draw_params(&cfg, 42, 0);
        assert_eq!(ds.samples[0].params, p);
        assert_eq!(ds.samples[0].coords, deform(&ds.base_mesh, &p, &cfg).unwrap());
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = GeneratorConfig::default();
        assert_eq!(sample_dataset(&cfg, 20, 9).unwrap(), sample_dataset(&cfg, 20, 9).unwrap());
        assert_ne!(sample_dataset(&cfg, 20, 9).unwrap(), sample_dataset(&cfg, 20, 10).unwrap());
    }

    #[test]
    fn degenerate_interval_rejected() {
        let mut cfg = GeneratorConfig::default();
        cfg.intervals[4] = [1.0, 0.5];
        assert!(sample_dataset(&cfg, 3, 0).is_err());
        assert!(sample_dataset(&GeneratorConfig::default(), 0, 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig {
            radial_count: 4,
            angular_count: 3,
            ..Default::default()
        };
        let ds = sample_dataset(&cfg, 12, 5).unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn label_parsing() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
        }
        assert!("broken".parse::<Label>().is_err());
    }
}
