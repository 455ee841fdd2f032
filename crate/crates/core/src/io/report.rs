//! Plain-text `key = value` run reports. Floats use the shortest form that
//! parses back to the same value; an infinite APSNR is written as `inf`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::congeal::{EpochStats, RunReport};
use crate::error::{Error, Result};
use crate::metrics::StackStats;
use crate::warp::WarpParams;

fn join<T: std::fmt::Display>(v: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for (i, x) in v.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

fn write_stats(out: &mut String, tag: &str, s: &StackStats) {
    let var = s.variance().unwrap_or_default();
    let _ = writeln!(out, "stats.{tag}.n = {}", s.n);
    let _ = writeln!(
        out,
        "stats.{tag}.variance_max = {}",
        var.iter().copied().fold(0.0, f64::max)
    );
    let _ = writeln!(out, "stats.{tag}.variance_energy = {}", var.iter().sum::<f64>());
    let _ = writeln!(out, "stats.{tag}.mean = {}", join(&s.mean));
    let _ = writeln!(out, "stats.{tag}.m2 = {}", join(&s.m2));
}

/// Renders a report; equal reports give identical text.
pub fn report_text(r: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method = {}", r.method);
    let _ = writeln!(out, "n = {}", r.n);
    let _ = writeln!(out, "dims = {} {} {}", r.dims.0, r.dims.1, r.dims.2);
    for (k, v) in &r.config {
        let _ = writeln!(out, "config.{k} = {v}");
    }
    let _ = writeln!(out, "apsnr.before = {}", r.apsnr_before);
    let _ = writeln!(out, "apsnr.after = {}", r.apsnr_after);
    let _ = writeln!(out, "area_ratio = {}", r.mean_area_ratio);
    let _ = writeln!(out, "flagged = {}", r.flagged);
    let _ = writeln!(out, "stopped_early = {}", r.stopped_early);
    let _ = writeln!(out, "wall_clock_s = {}", r.wall_clock_s);
    for (label, path) in &r.images {
        let _ = writeln!(out, "image.{label} = {path}");
    }
    write_stats(&mut out, "before", &r.before);
    write_stats(&mut out, "after", &r.after);
    let _ = writeln!(out, "# epoch = total D Crec Cpen probe_apsnr");
    let _ = writeln!(out, "epochs = {}", r.epochs.len());
    for e in &r.epochs {
        let _ = writeln!(
            out,
            "epoch.{} = {} {} {} {} {}",
            e.epoch,
            e.total,
            opt(e.distortion),
            opt(e.reconstruction),
            opt(e.penalty),
            e.probe_apsnr
        );
    }
    let _ = writeln!(out, "# param.<image> = dx dy for TL TR BR BL");
    let _ = writeln!(out, "params = {}", r.params.len());
    for (i, p) in r.params.iter().enumerate() {
        let _ = writeln!(out, "param.{i} = {}", join(p.0));
    }
    out
}

pub fn write_report(path: &Path, r: &RunReport) -> Result<()> {
    std::fs::write(path, report_text(r)).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    parse_report(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn bad(reason: impl Into<String>) -> Error {
    Error::malformed("report", reason)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(format!("bad value {v:?} for {key}")))
}

fn nums<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split_whitespace().map(|x| num(key, x)).collect()
}

pub fn parse_report(text: &str) -> Result<RunReport> {
    let mut map: HashMap<&str, &str> = HashMap::new();
    let mut config = Vec::new();
    let mut images = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .or_else(|| line.split_once('=').map(|(a, b)| (a.trim_end(), b.trim_start())))
            .ok_or_else(|| bad(format!("line without `=`: {line:?}")))?;
        if let Some(key) = k.strip_prefix("config.") {
            config.push((key.to_string(), v.to_string()));
        } else if let Some(label) = k.strip_prefix("image.") {
            images.push((label.to_string(), v.to_string()));
        } else if map.insert(k, v).is_some() {
            return Err(bad(format!("duplicate key {k}")));
        }
    }
    let get = |k: &str| map.get(k).copied().ok_or_else(|| bad(format!("missing key {k}")));
    let dims: Vec<usize> = nums("dims", get("dims")?)?;
    let [c, h, w] = dims[..] else {
        return Err(bad("dims needs three values"));
    };
    let stats = |tag: &str| -> Result<StackStats> {
        let n = num(tag, get(&format!("stats.{tag}.n"))?)?;
        let mean: Vec<f64> = nums(tag, get(&format!("stats.{tag}.mean"))?)?;
        let m2: Vec<f64> = nums(tag, get(&format!("stats.{tag}.m2"))?)?;
        if mean.len() != c * h * w || m2.len() != mean.len() {
            return Err(bad(format!("stats.{tag} has the wrong size")));
        }
        Ok(StackStats {
            n,
            dims: (c, h, w),
            mean,
            m2,
        })
    };
    let n_epochs: usize = num("epochs", get("epochs")?)?;
    let mut epochs = Vec::with_capacity(n_epochs);
    let mut epoch_keys: Vec<(usize, &str)> = map
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("epoch.").map(|e| num::<usize>(k, e).map(|e| (e, *v))))
        .collect::<Result<_>>()?;
    epoch_keys.sort_unstable_by_key(|e| e.0);
    if epoch_keys.len() != n_epochs {
        return Err(bad("epoch rows disagree with the epoch count"));
    }
    let opt = |k: &str, v: &str| -> Result<Option<f64>> {
        if v == "-" {
            Ok(None)
        } else {
            num(k, v).map(Some)
        }
    };
    for (e, row) in epoch_keys {
        let f: Vec<&str> = row.split_whitespace().collect();
        let [total, d, crec, cpen, ap] = f[..] else {
            return Err(bad(format!("epoch {e} needs five values")));
        };
        epochs.push(EpochStats {
            epoch: e,
            total: num("epoch", total)?,
            distortion: opt("D", d)?,
            reconstruction: opt("Crec", crec)?,
            penalty: opt("Cpen", cpen)?,
            probe_apsnr: num("apsnr", ap)?,
        });
    }
    let n_params: usize = num("params", get("params")?)?;
    let mut params = Vec::with_capacity(n_params);
    for i in 0..n_params {
        let v: Vec<f64> = nums("param", get(&format!("param.{i}"))?)?;
        params.push(WarpParams::from_slice(&v).map_err(|_| bad(format!("param.{i} needs 8 values")))?);
    }
    Ok(RunReport {
        method: get("method")?.to_string(),
        config,
        n: num("n", get("n")?)?,
        dims: (c, h, w),
        epochs,
        apsnr_before: num("apsnr.before", get("apsnr.before")?)?,
        apsnr_after: num("apsnr.after", get("apsnr.after")?)?,
        before: stats("before")?,
        after: stats("after")?,
        params,
        mean_area_ratio: num("area_ratio", get("area_ratio")?)?,
        flagged: num("flagged", get("flagged")?)?,
        stopped_early: num("stopped_early", get("stopped_early")?)?,
        images,
        wall_clock_s: num("wall_clock_s", get("wall_clock_s")?)?,
    })
}
