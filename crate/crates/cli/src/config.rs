//! Flat key-value experiment configuration with repeated keys for matrix
//! rows. Canonical serialization round-trips to an equal config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dosreg_core::matrix_kit::Mat;
use dosreg_core::plant::{pendulum_preset, InternalModel, LinearPlant};
use dosreg_core::{Error, Result};

/// Where the plant matrices come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantSource {
    Pendulum,
    Inline {
        a_rows: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<f64>,
        d_rows: Vec<Vec<f64>>,
        e_rows: Vec<Vec<f64>>,
        f: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSource {
    Seed(u64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub plant: PlantSource,
    /// Internal-model injection gain; `None` defers to the preset's value.
    pub g2: Option<Vec<f64>>,
    pub q_diag: Vec<f64>,
    pub r: f64,
    pub dos_eta: f64,
    pub dos_tau_d: f64,
    pub dos_kappa: f64,
    pub dos_t: f64,
    pub schedule: ScheduleSource,
    pub learn_horizon: u64,
    pub sim_horizon: u64,
    pub exploration_seed: u64,
    pub exploration_amplitude: f64,
    pub exploration_under_attack: bool,
    pub epsilon0: f64,
    /// Explicit initial policy; `None` means "oracle gain rounded to two
    /// significant digits".
    pub k0: Option<Vec<f64>>,
    pub x0: Vec<f64>,
    pub z0: Vec<f64>,
    pub w0: Vec<f64>,
    pub metrics_e_tol: f64,
    pub out_dir: PathBuf,
}

fn parse_floats(key: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: cannot parse `{tok}` as a number")))
        })
        .collect()
}

fn parse_float(key: &str, raw: &str) -> Result<f64> {
    let vals = parse_floats(key, raw)?;
    if vals.len() != 1 {
        return Err(Error::Config(format!("{key}: expected one number")));
    }
    Ok(vals[0])
}

fn parse_int(key: &str, raw: &str) -> Result<u64> {
    raw.trim()
        .parse::<u64>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{raw}` as an integer")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "{key}: expected true/false, got `{other}`"
        ))),
    }
}

fn fmt_floats(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut singles: BTreeMap<String, String> = BTreeMap::new();
        let mut rows: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            match key.as_str() {
                "a_row" | "d_row" | "e_row" => rows.entry(key).or_default().push(value),
                _ => {
                    if singles.insert(key.clone(), value).is_some() {
                        return Err(Error::Config(format!("duplicate key `{key}`")));
                    }
                }
            }
        }

        let known = [
            "plant",
            "b",
            "c",
            "f",
            "g2",
            "q_diag",
            "r",
            "dos_eta",
            "dos_tau_d",
            "dos_kappa",
            "dos_t",
            "dos_seed",
            "dos_schedule_file",
            "learn_horizon",
            "sim_horizon",
            "exploration_seed",
            "exploration_amplitude",
            "exploration_under_attack",
            "epsilon0",
            "k0",
            "x0",
            "z0",
            "w0",
            "metrics_e_tol",
            "out_dir",
        ];
        for key in singles.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }

        let take = |key: &str| singles.get(key).cloned();
        let require = |key: &str| {
            take(key).ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
        };

        let plant = match require("plant")?.as_str() {
            "pendulum" => {
                if rows.contains_key("a_row") {
                    return Err(Error::Config(
                        "plant = pendulum cannot be combined with inline matrices".into(),
                    ));
                }
                PlantSource::Pendulum
            }
            "inline" => {
                let grab_rows = |key: &str| -> Result<Vec<Vec<f64>>> {
                    rows.get(key)
                        .ok_or_else(|| Error::Config(format!("inline plant needs `{key}` lines")))?
                        .iter()
                        .map(|raw| parse_floats(key, raw))
                        .collect()
                };
                PlantSource::Inline {
                    a_rows: grab_rows("a_row")?,
                    b: parse_floats("b", &require("b")?)?,
                    c: parse_floats("c", &require("c")?)?,
                    d_rows: grab_rows("d_row")?,
                    e_rows: grab_rows("e_row")?,
                    f: parse_floats("f", &require("f")?)?,
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "plant must be `pendulum` or `inline`, got `{other}`"
                )))
            }
        };

        let schedule = match (take("dos_seed"), take("dos_schedule_file")) {
            (Some(seed), None) => ScheduleSource::Seed(parse_int("dos_seed", &seed)?),
            (None, Some(path)) => ScheduleSource::File(PathBuf::from(path)),
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "set either dos_seed or dos_schedule_file, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "one of dos_seed or dos_schedule_file is required".into(),
                ))
            }
        };

        let config = Self {
            plant,
            g2: take("g2").map(|raw| parse_floats("g2", &raw)).transpose()?,
            q_diag: parse_floats("q_diag", &require("q_diag")?)?,
            r: take("r").map_or(Ok(1.0), |raw| parse_float("r", &raw))?,
            dos_eta: parse_float("dos_eta", &require("dos_eta")?)?,
            dos_tau_d: parse_float("dos_tau_d", &require("dos_tau_d")?)?,
            dos_kappa: parse_float("dos_kappa", &require("dos_kappa")?)?,
            dos_t: parse_float("dos_t", &require("dos_t")?)?,
            schedule,
            learn_horizon: take("learn_horizon")
                .map_or(Ok(100), |raw| parse_int("learn_horizon", &raw))?,
            sim_horizon: take("sim_horizon")
                .map_or(Ok(600), |raw| parse_int("sim_horizon", &raw))?,
            exploration_seed: take("exploration_seed")
                .map_or(Ok(1), |raw| parse_int("exploration_seed", &raw))?,
            exploration_amplitude: take("exploration_amplitude")
                .map_or(Ok(1.0), |raw| parse_float("exploration_amplitude", &raw))?,
            exploration_under_attack: take("exploration_under_attack")
                .map_or(Ok(true), |raw| parse_bool("exploration_under_attack", &raw))?,
            epsilon0: take("epsilon0").map_or(Ok(0.5), |raw| parse_float("epsilon0", &raw))?,
            k0: take("k0").map(|raw| parse_floats("k0", &raw)).transpose()?,
            x0: parse_floats("x0", &require("x0")?)?,
            z0: take("z0")
                .map(|raw| parse_floats("z0", &raw))
                .transpose()?
                .unwrap_or_default(),
            w0: parse_floats("w0", &require("w0")?)?,
            metrics_e_tol: take("metrics_e_tol")
                .map_or(Ok(1e-3), |raw| parse_float("metrics_e_tol", &raw))?,
            out_dir: PathBuf::from(take("out_dir").unwrap_or_else(|| "runs".into())),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if config.z0.is_empty() {
            config.z0 = vec![0.0; config.exo_dim()];
            config.validate()?;
        }
        Ok(config)
    }

    fn state_dim(&self) -> usize {
        match &self.plant {
            PlantSource::Pendulum => 4,
            PlantSource::Inline { a_rows, .. } => a_rows.len(),
        }
    }

    fn exo_dim(&self) -> usize {
        match &self.plant {
            PlantSource::Pendulum => 1,
            PlantSource::Inline { e_rows, .. } => e_rows.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let q = self.exo_dim();
        if self.q_diag.len() != n + q {
            return Err(Error::Config(format!(
                "q_diag must list {} entries (n+q), got {}",
                n + q,
                self.q_diag.len()
            )));
        }
        if self.x0.len() != n {
            return Err(Error::Config(format!(
                "x0 must have {n} entries, got {}",
                self.x0.len()
            )));
        }
        if !self.z0.is_empty() && self.z0.len() != q {
            return Err(Error::Config(format!(
                "z0 must have {q} entries, got {}",
                self.z0.len()
            )));
        }
        if self.w0.len() != q {
            return Err(Error::Config(format!(
                "w0 must have {q} entries, got {}",
                self.w0.len()
            )));
        }
        if let Some(g2) = &self.g2 {
            if g2.len() != q {
                return Err(Error::Config(format!(
                    "g2 must have {q} entries, got {}",
                    g2.len()
                )));
            }
        }
        if let Some(k0) = &self.k0 {
            if k0.len() != n + q {
                return Err(Error::Config(format!(
                    "k0 must have {} entries, got {}",
                    n + q,
                    k0.len()
                )));
            }
        }
        if self.learn_horizon < 1 || self.sim_horizon < 1 {
            return Err(Error::Config("horizons must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match &self.plant {
            PlantSource::Pendulum => out.push_str("plant = pendulum\n"),
            PlantSource::Inline {
                a_rows,
                b,
                c,
                d_rows,
                e_rows,
                f,
            } => {
                out.push_str("plant = inline\n");
                for row in a_rows {
                    out.push_str(&format!("a_row = {}\n", fmt_floats(row)));
                }
                out.push_str(&format!("b = {}\n", fmt_floats(b)));
                out.push_str(&format!("c = {}\n", fmt_floats(c)));
                for row in d_rows {
                    out.push_str(&format!("d_row = {}\n", fmt_floats(row)));
                }
                for row in e_rows {
                    out.push_str(&format!("e_row = {}\n", fmt_floats(row)));
                }
                out.push_str(&format!("f = {}\n", fmt_floats(f)));
            }
        }
        if let Some(g2) = &self.g2 {
            out.push_str(&format!("g2 = {}\n", fmt_floats(g2)));
        }
        out.push_str(&format!("q_diag = {}\n", fmt_floats(&self.q_diag)));
        out.push_str(&format!("r = {}\n", self.r));
        out.push_str(&format!("dos_eta = {}\n", self.dos_eta));
        out.push_str(&format!("dos_tau_d = {}\n", self.dos_tau_d));
        out.push_str(&format!("dos_kappa = {}\n", self.dos_kappa));
        out.push_str(&format!("dos_t = {}\n", self.dos_t));
        match &self.schedule {
            ScheduleSource::Seed(seed) => out.push_str(&format!("dos_seed = {seed}\n")),
            ScheduleSource::File(path) => {
                out.push_str(&format!("dos_schedule_file = {}\n", path.display()))
            }
        }
        out.push_str(&format!("learn_horizon = {}\n", self.learn_horizon));
        out.push_str(&format!("sim_horizon = {}\n", self.sim_horizon));
        out.push_str(&format!("exploration_seed = {}\n", self.exploration_seed));
        out.push_str(&format!(
            "exploration_amplitude = {}\n",
            self.exploration_amplitude
        ));
        out.push_str(&format!(
            "exploration_under_attack = {}\n",
            self.exploration_under_attack
        ));
        out.push_str(&format!("epsilon0 = {}\n", self.epsilon0));
        if let Some(k0) = &self.k0 {
            out.push_str(&format!("k0 = {}\n", fmt_floats(k0)));
        }
        out.push_str(&format!("x0 = {}\n", fmt_floats(&self.x0)));
        out.push_str(&format!("z0 = {}\n", fmt_floats(&self.z0)));
        out.push_str(&format!("w0 = {}\n", fmt_floats(&self.w0)));
        out.push_str(&format!("metrics_e_tol = {}\n", self.metrics_e_tol));
        out.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        out
    }

    /// Materialize the plant and internal model.
    pub fn build_plant(&self) -> Result<(LinearPlant, InternalModel)> {
        match &self.plant {
            PlantSource::Pendulum => {
                let (plant, preset_im) = pendulum_preset();
                let im = match &self.g2 {
                    None => preset_im,
                    Some(g2) => {
                        InternalModel::new(&plant.e, Mat::from_column_slice(g2.len(), 1, g2))?
                    }
                };
                Ok((plant, im))
            }
            PlantSource::Inline {
                a_rows,
                b,
                c,
                d_rows,
                e_rows,
                f,
            } => {
                let n = a_rows.len();
                let q = e_rows.len();
                let flat = |rows: &[Vec<f64>], cols: usize, name: &str| -> Result<Vec<f64>> {
                    let mut out = Vec::with_capacity(rows.len() * cols);
                    for row in rows {
                        if row.len() != cols {
                            return Err(Error::Config(format!(
                                "{name}: expected {cols} entries per row, got {}",
                                row.len()
                            )));
                        }
                        out.extend_from_slice(row);
                    }
                    Ok(out)
                };
                let a = Mat::from_row_slice(n, n, &flat(a_rows, n, "a_row")?);
                let d = Mat::from_row_slice(n, q, &flat(d_rows, q, "d_row")?);
                let e = Mat::from_row_slice(q, q, &flat(e_rows, q, "e_row")?);
                if b.len() != n || c.len() != n || f.len() != q {
                    return Err(Error::Config(
                        "b and c must have n entries, f must have q entries".into(),
                    ));
                }
                let plant = LinearPlant::new(
                    a,
                    Mat::from_column_slice(n, 1, b),
                    Mat::from_row_slice(1, n, c),
                    d,
                    e,
                    Mat::from_row_slice(1, q, f),
                )?;
                let g2 = self
                    .g2
                    .as_ref()
                    .ok_or_else(|| Error::Config("inline plants must set g2 explicitly".into()))?;
                let im = InternalModel::new(&plant.e, Mat::from_column_slice(q, 1, g2))?;
                Ok((plant, im))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PENDULUM_CFG: &str = "\
# reference experiment
plant = pendulum
q_diag = 1000 1000 1000 1000 15
r = 1
dos_eta = 1
dos_tau_d = 15
dos_kappa = 40
dos_t = 10
dos_seed = 7
x0 = 0.5 0 0 0
z0 = 0
w0 = 1
";

    #[test]
    fn parses_reference_config_with_defaults() {
        let cfg = ExperimentConfig::parse(PENDULUM_CFG).unwrap();
        assert_eq!(cfg.plant, PlantSource::Pendulum);
        assert_eq!(cfg.learn_horizon, 100);
        assert_eq!(cfg.epsilon0, 0.5);
        assert_eq!(cfg.schedule, ScheduleSource::Seed(7));
        let (plant, im) = cfg.build_plant().unwrap();
        assert_eq!(plant.state_dim(), 4);
        assert_eq!(im.g2[(0, 0)], 0.5);
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = ExperimentConfig::parse(PENDULUM_CFG).unwrap();
        let text = cfg.to_text();
        let again = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, again.to_text());
    }

    #[test]
    fn inline_plant_round_trips() {
        let raw = "\
plant = inline
a_row = 0.5
b = 1
c = 1
d_row = 0.1
e_row = 1
f = -1
g2 = 0.5
q_diag = 1 1
dos_eta = 1.5
dos_tau_d = 10
dos_kappa = 5
dos_t = 4
dos_seed = 3
x0 = 0.2
z0 = 0
w0 = 1
";
        let cfg = ExperimentConfig::parse(raw).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        let (plant, _) = cfg.build_plant().unwrap();
        assert_eq!(plant.state_dim(), 1);
        assert_eq!(plant.exo_dim(), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::parse("plant = pendulum\n").is_err()); // missing keys
        let bad_dim = PENDULUM_CFG.replace("q_diag = 1000 1000 1000 1000 15", "q_diag = 1 1");
        assert!(ExperimentConfig::parse(&bad_dim).is_err());
        let unknown = format!("{PENDULUM_CFG}wibble = 3\n");
        assert!(ExperimentConfig::parse(&unknown).is_err());
        let both = format!("{PENDULUM_CFG}dos_schedule_file = s.txt\n");
        assert!(ExperimentConfig::parse(&both).is_err());
    }
}
