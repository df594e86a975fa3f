//! SDPA sparse format (`.dat-s`) export and solution import, for handing
//! the margin problem to an external solver.
//!
//! Exported problem, in SDPA's primal form `min c^T x` s.t.
//! `sum_i x_i F_i - F_0 >= 0`, over `x = (y, t)`:
//!
//! * one block per LMI block, negated when the block must be negative;
//!   strict blocks carry `-t I`, non-strict blocks the fixed margin in `F_0`;
//! * one diagonal block with `-1 <= y_r <= 1` and `t <= 1`;
//! * objective `-t`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::process::Command;

use super::FeasibilityProblem;
use crate::error::{Error, Result};
use crate::lmi::{Orientation, Strictness};

pub const SOLVER_ENV: &str = "POLYCONSENSUS_SDPA_SOLVER";

fn sign(o: Orientation) -> f64 {
    match o {
        Orientation::RequirePositive => 1.0,
        Orientation::RequireNegative => -1.0,
    }
}

/// Render the margin problem in SDPA sparse format.
pub fn to_sdpa_string(problem: &FeasibilityProblem) -> String {
    let m = problem.n_vars() + 1;
    let t = m; // 1-based index of the margin variable
    let n_lmi = problem.blocks.len();
    let box_blk = n_lmi + 1;
    let mut s = String::new();
    let _ = writeln!(s, "\"polyconsensus margin problem: maximise t");
    let _ = writeln!(s, "{m}");
    let _ = writeln!(s, "{}", n_lmi + 1);
    let sizes: Vec<String> = problem
        .blocks
        .iter()
        .map(|b| b.size().to_string())
        .chain(std::iter::once(format!("-{}", 2 * problem.n_vars() + 1)))
        .collect();
    let _ = writeln!(s, "{}", sizes.join(" "));
    let c: Vec<String> = (1..=m)
        .map(|i| if i == t { "-1".into() } else { "0".into() })
        .collect();
    let _ = writeln!(s, "{}", c.join(" "));

    let mut entry = |mat: usize, blk: usize, i: usize, j: usize, v: f64| {
        if v != 0.0 {
            let _ = writeln!(s, "{mat} {blk} {i} {j} {v:e}");
        }
    };
    for (bi, b) in problem.blocks.iter().enumerate() {
        let blk = bi + 1;
        let sg = sign(b.orientation);
        let k = b.size();
        let f0 = b.value.constant();
        for i in 0..k {
            for j in i..k {
                let mut v = -sg * f0[(i, j)];
                if i == j && b.strictness == Strictness::NonStrict {
                    v += problem.margins.non_strict;
                }
                entry(0, blk, i + 1, j + 1, v);
            }
        }
        for (r, fr) in b.value.terms() {
            for i in 0..k {
                for j in i..k {
                    entry(r + 1, blk, i + 1, j + 1, sg * fr[(i, j)]);
                }
            }
        }
        if b.strictness == Strictness::Strict {
            for i in 0..k {
                entry(t, blk, i + 1, i + 1, -1.0);
            }
        }
    }
    let nb = 2 * problem.n_vars() + 1;
    for pos in 1..=nb {
        entry(0, box_blk, pos, pos, -1.0);
    }
    for r in 0..problem.n_vars() {
        entry(r + 1, box_blk, 2 * r + 1, 2 * r + 1, -1.0);
        entry(r + 1, box_blk, 2 * r + 2, 2 * r + 2, 1.0);
    }
    entry(t, box_blk, nb, nb, -1.0);
    s
}

pub fn export_sdpa(problem: &FeasibilityProblem, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(to_sdpa_string(problem).as_bytes())?;
    Ok(())
}

fn parse_numbers(s: &str) -> Vec<f64> {
    s.split(|c: char| c == ',' || c.is_whitespace() || c == '{' || c == '}')
        .filter(|t| !t.is_empty())
        .filter_map(|t| t.parse::<f64>().ok())
        .collect()
}

/// Read the primal vector `x = (y, t)` from solver output.
///
/// Two layouts are understood: SDPA result files (`xVec = {..}`) and CSDP
/// solution files (first line holds the vector).
pub fn parse_solution(text: &str, n_vars: usize) -> Result<Vec<f64>> {
    let expected = n_vars + 1;
    let lines: Vec<&str> = text.lines().collect();
    if let Some(pos) = lines
        .iter()
        .position(|l| l.trim_start().starts_with("xVec"))
    {
        let mut buf = lines[pos].split_once('=').map_or("", |x| x.1).to_string();
        let mut k = pos + 1;
        while !buf.contains('}') && k < lines.len() {
            buf.push_str(lines[k]);
            k += 1;
        }
        let v = parse_numbers(&buf);
        if v.len() != expected {
            return Err(Error::SdpaParse {
                line: pos + 1,
                msg: format!("xVec has {} entries, expected {expected}", v.len()),
            });
        }
        return Ok(v);
    }
    let first = lines
        .iter()
        .position(|l| !l.trim().is_empty())
        .ok_or(Error::SdpaParse {
            line: 1,
            msg: "empty solution file".into(),
        })?;
    let v = parse_numbers(lines[first]);
    if v.len() != expected {
        return Err(Error::SdpaParse {
            line: first + 1,
            msg: format!(
                "solution vector has {} entries, expected {expected}",
                v.len()
            ),
        });
    }
    Ok(v)
}

pub fn import_sdpa_solution(path: &Path, n_vars: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_solution(&text, n_vars)
}

/// Run an external SDPA-format solver as `<cmd> <input> <output>` and return
/// the decision vector (without the margin variable).
pub fn run_external(
    problem: &FeasibilityProblem,
    command: &str,
    workdir: &Path,
) -> Result<Vec<f64>> {
    let input = workdir.join("problem.dat-s");
    let output = workdir.join("problem.out");
    export_sdpa(problem, &input)?;
    let status = Command::new(command)
        .arg(&input)
        .arg(&output)
        .status()
        .map_err(|e| Error::Internal(format!("could not run external solver {command}: {e}")))?;
    if !status.success() && !output.exists() {
        return Err(Error::Internal(format!(
            "external solver {command} exited with {status}"
        )));
    }
    let mut x = import_sdpa_solution(&output, problem.n_vars())?;
    x.pop();
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sdpa_xvec() {
        let text = "phase.value = pdOPT\nxVec = \n{1.0e+00,-2.5,3}\nxMat =\n";
        assert_eq!(parse_solution(text, 2).unwrap(), vec![1.0, -2.5, 3.0]);
    }

    #[test]
    fn parses_csdp_first_line() {
        let text = "0.5 0.25 1e-3 \n1 1 1 1 1.0\n";
        assert_eq!(parse_solution(text, 2).unwrap(), vec![0.5, 0.25, 1e-3]);
    }

    #[test]
    fn wrong_length_is_reported() {
        assert!(matches!(
            parse_solution("1 2\n", 2),
            Err(Error::SdpaParse { line: 1, .. })
        ));
    }
}
