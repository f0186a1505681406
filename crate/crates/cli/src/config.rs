//! Flat `key = value` configuration files, one entry per line, `#` comments.

use std::collections::HashMap;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use tracefem::assembly::{AlphaMode, MethodParams, RMode, XiMode};
use tracefem::{Error, Result};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scene: String,
    pub k: usize,
    pub k_g: usize,
    pub beta: f64,
    pub xi: XiMode,
    pub alpha: AlphaMode,
    pub r_mode: RMode,
    pub mu_d: f64,
    pub levels_s: RangeInclusive<u32>,
    pub levels_q: RangeInclusive<u32>,
    pub diagonal: bool,
    pub h_init: f64,
    pub dt_init: f64,
    pub t_end: f64,
    pub domain: ([f64; 2], [f64; 2]),
    pub temporal_points: usize,
    pub segment_points: usize,
    pub out: PathBuf,
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn params(&self) -> MethodParams {
        let mut p = MethodParams::new(self.k, self.k_g);
        p.beta = self.beta;
        p.xi = self.xi;
        p.alpha = self.alpha;
        p.r_mode = self.r_mode;
        p.mu_d = self.mu_d;
        p.temporal_points = self.temporal_points;
        p.segment_points = self.segment_points;
        p
    }
}

fn parse_range(s: &str) -> Result<RangeInclusive<u32>> {
    if let Some((a, b)) = s.split_once("..") {
        let a = a
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad range start '{a}'")))?;
        let b = b
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| Error::Config(format!("bad range end '{b}'")))?;
        Ok(a..=b)
    } else {
        let v = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad level '{s}'")))?;
        Ok(v..=v)
    }
}

pub fn parse(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| map.get(key).cloned();
    let get_f64 = |key: &str, default: f64| -> Result<f64> {
        match get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad number for '{key}': {v}"))),
        }
    };
    let get_usize = |key: &str, default: usize| -> Result<usize> {
        match get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad integer for '{key}': {v}"))),
        }
    };

    let scene = get("scene").ok_or_else(|| Error::Config("missing 'scene'".into()))?;
    let k = get_usize("k", 1)?;
    let k_g = get_usize("k_g", k)?;
    if k < 1 || k_g < 1 {
        return Err(Error::Config("orders k and k_g must be at least 1".into()));
    }
    let xi = match get("xi").as_deref() {
        None | Some("h") => XiMode::H,
        Some("inv_h") | Some("1/h") => XiMode::InvH,
        Some(other) => return Err(Error::Config(format!("unknown xi mode '{other}'"))),
    };
    let alpha = match get("alpha").as_deref() {
        None | Some("simple") => AlphaMode::Simple,
        Some("improved") => AlphaMode::Improved,
        Some(other) => return Err(Error::Config(format!("unknown alpha mode '{other}'"))),
    };
    let r_mode = match get("r_mode").as_deref() {
        None | Some("weighted") => RMode::Weighted,
        Some("one") => RMode::One,
        Some(other) => return Err(Error::Config(format!("unknown r_mode '{other}'"))),
    };
    let levels = get("levels").map(|s| parse_range(&s)).transpose()?;
    let levels_s = match get("levels_s") {
        Some(s) => parse_range(&s)?,
        None => levels.clone().unwrap_or(0..=3),
    };
    let levels_q = match get("levels_q") {
        Some(s) => parse_range(&s)?,
        None => levels.unwrap_or(0..=3),
    };
    if levels_s.is_empty() || levels_q.is_empty() {
        return Err(Error::Config("level ranges must be nonempty".into()));
    }
    let domain = match get("domain") {
        None => ([-1.0, -1.0], [1.0, 1.0]),
        Some(s) => {
            let vals: Vec<f64> = s
                .split_whitespace()
                .map(|v| v.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad domain '{s}'")))?;
            if vals.len() != 4 {
                return Err(Error::Config(
                    "domain needs four numbers: x0 x1 y0 y1".into(),
                ));
            }
            ([vals[0], vals[2]], [vals[1], vals[3]])
        }
    };
    let out = get("out")
        .map(PathBuf::from)
        .unwrap_or_else(|| base.join("out"));
    Ok(ExperimentConfig {
        scene,
        k,
        k_g,
        beta: get_f64("beta", 0.0)?,
        xi,
        alpha,
        r_mode,
        mu_d: get_f64("mu_d", 1.0)?,
        levels_s,
        levels_q,
        diagonal: get("diagonal").map(|v| v == "true").unwrap_or(true),
        h_init: get_f64("h_init", 0.25)?,
        dt_init: get_f64("dt_init", 0.25)?,
        t_end: get_f64("t_end", get_f64("T", 1.0)?)?,
        domain,
        temporal_points: get_usize("L", 0)?,
        segment_points: get_usize("q_s", 0)?,
        out,
        threads: get_usize("threads", 1)?,
    })
}
