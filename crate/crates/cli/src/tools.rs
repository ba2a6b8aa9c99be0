use std::process::ExitCode;

use anyhow::Result;
use ocrdistill::losses::{gradcheck_loss, GRADCHECK_LOSSES, GRADCHECK_TOL};

use crate::rundir::usage;
use crate::GradcheckArgs;

/// Prints `loss,max_rel_err,pass` rows; fails if any row reaches the
/// tolerance.
pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let selected: Vec<&str> = if a.losses.is_empty() {
        GRADCHECK_LOSSES.to_vec()
    } else {
        a.losses.iter().map(String::as_str).collect()
    };
    if let Some(bad) = selected.iter().find(|n| !GRADCHECK_LOSSES.contains(n)) {
        return Err(usage(format!(
            "unknown loss `{bad}`; choose from {}",
            GRADCHECK_LOSSES.join(",")
        )));
    }
    println!("loss,max_rel_err,pass");
    let mut all_ok = true;
    for name in selected {
        let err = gradcheck_loss(name, a.instances, a.seed, a.inject_fault)?;
        let ok = err < GRADCHECK_TOL;
        all_ok &= ok;
        println!("{name},{err:e},{ok}");
    }
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
