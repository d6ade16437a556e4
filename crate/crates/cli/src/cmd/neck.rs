use std::path::Path;

use anyhow::{bail, Context, Result};

use afpnkit_core::neck::check::run_neck_check;
use afpnkit_core::neck::{init_weights as init_store, Init, NeckConfig};
use afpnkit_core::weights::WeightStore;

use crate::config::RunConfig;
use crate::output::emit;
use crate::Status;

pub fn init_weights(cfg: &RunConfig, seed: u64, zeros: bool, out: Option<&Path>) -> Result<Status> {
    let Some(out) = out else {
        bail!("init-weights needs --out PATH for the weight manifest");
    };
    let init = if zeros { Init::Zeros } else { Init::Random { seed } };
    let store = init_store(&cfg.neck, init)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    store.save(out).with_context(|| format!("writing weights {}", out.display()))?;
    eprintln!("wrote {} tensors to {}", store.len(), out.display());
    Ok(Status::Pass)
}

/// Loads weights and checks every parameter the neck reads is present with
/// the right shape, naming all offenders.
pub fn load_weights(cfg: &NeckConfig, path: &Path) -> Result<WeightStore> {
    let store = WeightStore::load(path).with_context(|| format!("loading weights {}", path.display()))?;
    let mut missing = Vec::new();
    let mut misshapen = Vec::new();
    for (name, shape) in cfg.parameter_shapes() {
        match store.get(&name) {
            Err(_) => missing.push(name),
            Ok(t) if t.shape() != shape => misshapen.push(format!("{name} is {}, expected {shape}", t.shape())),
            Ok(_) => {}
        }
    }
    if !missing.is_empty() {
        bail!("weights {} are missing tensor(s): {}", path.display(), missing.join(", "));
    }
    if !misshapen.is_empty() {
        bail!("weights {} have wrong shapes: {}", path.display(), misshapen.join("; "));
    }
    Ok(store)
}

pub fn neck_check(cfg: &RunConfig, seed: u64, weights: &Path, input_size: usize, out: Option<&Path>) -> Result<Status> {
    let store = load_weights(&cfg.neck, weights)?;
    let report = run_neck_check(&cfg.neck, &store, input_size, seed)?;
    emit(&report, out)?;
    if report.pass {
        Ok(Status::Pass)
    } else {
        eprintln!(
            "neck check failed: residuals aam {} fem {} neck {}, attention [{}, {}], finite {}",
            report.residual_aam,
            report.residual_fem,
            report.residual_neck,
            report.attention_min,
            report.attention_max,
            report.finite
        );
        Ok(Status::Fail)
    }
}
