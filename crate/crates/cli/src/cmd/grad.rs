use std::path::Path;

use anyhow::Result;

use afpnkit_core::gradcheck::{ciou_grad_check, GradCheckConfig};

use crate::output::emit;
use crate::Status;

pub fn grad_check(trials: usize, seed: u64, inject_bug: bool, out: Option<&Path>) -> Result<Status> {
    let cfg = GradCheckConfig { trials, seed, ..GradCheckConfig::default() };
    let mutation = inject_bug.then_some([1.0, 1.0, 1.05, 1.0]);
    let report = ciou_grad_check(&cfg, mutation)?;
    emit(&report, out)?;
    if report.pass {
        Ok(Status::Pass)
    } else {
        eprintln!("gradient check failed: max relative error {} > {}", report.max_rel_error, report.tolerance);
        Ok(Status::Fail)
    }
}
