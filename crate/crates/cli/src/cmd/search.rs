use std::path::Path;

use anyhow::{bail, Result};

use afpnkit_core::search::{
    resume, step, Algo, ProxyEvaluator, RewardEvaluator, SearchConfig, SearchState, SyntheticReward,
};

use crate::config::RunConfig;
use crate::output::{to_json, write_file};
use crate::Status;

pub fn search(
    cfg: &RunConfig,
    seed: u64,
    budget: usize,
    algo: Algo,
    proxy: bool,
    from: Option<&Path>,
    out: Option<&Path>,
) -> Result<Status> {
    let Some(out) = out else {
        bail!("search needs --out DIR");
    };
    let search_cfg = SearchConfig {
        seed,
        budget,
        algo,
        batch_size: cfg.search.batch_size,
        ppo: cfg.search.ppo,
        controller: cfg.search.controller,
    };
    search_cfg.validate()?;
    let evaluator: Box<dyn RewardEvaluator> = if proxy {
        Box::new(ProxyEvaluator::default())
    } else {
        Box::new(SyntheticReward::default())
    };
    let mut state = match from {
        Some(p) => SearchState::load(p)?,
        None => SearchState::new(&search_cfg)?,
    };
    std::fs::create_dir_all(out)?;
    let checkpoint = out.join("checkpoint.json");
    while step(evaluator.as_ref(), &search_cfg, &mut state)? {
        write_file(&checkpoint, &to_json(&state)?)?;
    }
    write_file(&checkpoint, &to_json(&state)?)?;
    let outcome = resume(evaluator.as_ref(), &search_cfg, state)?;
    for h in &outcome.history {
        println!("iteration {} evaluation {} reward {}", h.iteration, h.evaluation, h.reward);
    }
    write_file(&out.join("history.json"), &to_json(&outcome.history)?)?;
    write_file(&out.join("best_policy.json"), &to_json(&outcome.best.policy)?)?;
    write_file(&out.join("final_policy.json"), &to_json(&outcome.final_policy)?)?;
    eprintln!(
        "best reward {} at evaluation {} of {}",
        outcome.best.reward,
        outcome.best.evaluation,
        outcome.history.len()
    );
    Ok(Status::Pass)
}
