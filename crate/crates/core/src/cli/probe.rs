//! `segauc probe`: one analytic formula per invocation.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};

use super::{load_scenario, EXIT_INVALID, EXIT_OK};
use crate::analytic::{
    clsw, clsw_maximizer, combinatorial_allocation, log_lsw, lsw, lsw_maximizer, myerson_expected_payment,
    set_relevance_heuristic, set_win_probability, softmax_allocation, top_k_inclusion_probability, SetScores,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Expression {
    /// Retrieval probabilities `x_i ∝ q_i b_i`.
    Softmax,
    /// Probability that exactly the set `--S` takes the top `|S|` scores.
    Setwin,
    /// Probability that ad `--i` is among the top `--k`.
    Topk,
    /// Expected per-click payment of ad `--i`.
    Myerson,
    /// LSW of the allocation `--x` (log-LSW on a second line).
    Lsw,
    /// LSW-maximizing allocation.
    LswMax,
    /// Set allocation over all `--k`-subsets (heuristic set relevance).
    CombAlloc,
    /// CLSW maximizer over all `--k`-subsets, then its CLSW value.
    Clsw,
    /// Set relevance of `--S` and its member shares.
    SetRelevance,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(value_enum)]
    pub expression: Expression,
    /// Relevance scores, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q: Option<Vec<f64>>,
    /// Bids, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub b: Option<Vec<f64>>,
    /// Values, comma separated (default: the bids).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub v: Option<Vec<f64>>,
    /// Allocation to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Option<Vec<f64>>,
    /// Ad set: `all` or comma-separated indices.
    #[arg(long = "S")]
    pub set: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub i: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Take `q` and `b` from a scenario file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Decimal places (default 4 for allocations, 6 otherwise).
    #[arg(long)]
    pub precision: Option<usize>,
}

struct Inputs {
    q: Vec<f64>,
    b: Vec<f64>,
    v: Vec<f64>,
}

fn inputs(a: &ProbeArgs) -> Result<Inputs, String> {
    let scenario = a.scenario.as_deref().map(load_scenario).transpose()?;
    let q = match (&a.q, &scenario) {
        (Some(q), _) => q.clone(),
        (None, Some(s)) => s.static_q().ok_or("scenario has no static relevance")?.to_vec(),
        (None, None) => return Err("--q (or --scenario) is required".into()),
    };
    let b = match (&a.b, &scenario) {
        (Some(b), _) => b.clone(),
        (None, Some(s)) => s.bids(),
        (None, None) => match &a.v {
            Some(v) => v.clone(),
            // set relevance does not depend on bids
            None if a.expression == Expression::SetRelevance => vec![1.0; q.len()],
            None => return Err("--b (or --scenario) is required".into()),
        },
    };
    let v = match (&a.v, &scenario) {
        (Some(v), _) => v.clone(),
        (None, Some(s)) if a.b.is_none() => s.values(),
        _ => b.clone(),
    };
    if q.len() != b.len() || q.len() != v.len() {
        return Err(format!("length mismatch: {} relevance scores, {} bids, {} values", q.len(), b.len(), v.len()));
    }
    if q.is_empty() {
        return Err("at least one ad is required".into());
    }
    if q.iter().chain(&b).chain(&v).any(|x| !x.is_finite() || *x < 0.0) {
        return Err("relevance, bids and values must be finite and non-negative".into());
    }
    Ok(Inputs { q, b, v })
}

fn parse_set(arg: Option<&str>, n: usize) -> Result<Vec<usize>, String> {
    let arg = arg.ok_or("--S is required")?;
    if arg.trim() == "all" {
        return Ok((0..n).collect());
    }
    let mut set = arg
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| format!("bad index {s:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    set.sort_unstable();
    set.dedup();
    if let Some(&bad) = set.iter().find(|&&i| i >= n) {
        return Err(format!("index {bad} out of range for {n} ads"));
    }
    Ok(set)
}

fn required<T: Copy>(value: Option<T>, name: &str) -> Result<T, String> {
    value.ok_or_else(|| format!("--{name} is required"))
}

fn row(values: &[f64], precision: usize) -> String {
    values.iter().map(|x| format!("{x:.precision$}")).collect::<Vec<_>>().join(" ")
}

fn evaluate(a: &ProbeArgs) -> Result<String, String> {
    let Inputs { q, b, v } = inputs(a)?;
    let n = q.len();
    let alloc_digits = a.precision.unwrap_or(4);
    let digits = a.precision.unwrap_or(6);
    let index = |name| -> Result<usize, String> {
        let i = required(a.i, name)?;
        if i >= n {
            return Err(format!("--{name} {i} out of range for {n} ads"));
        }
        Ok(i)
    };
    let size = || -> Result<usize, String> {
        let k = required(a.k, "k")?;
        if k == 0 || k > n {
            return Err(format!("--k must be in 1..={n}"));
        }
        Ok(k)
    };
    let err = |e: crate::error::AnalyticError| e.to_string();
    let out = match a.expression {
        Expression::Softmax => row(&softmax_allocation(&q, &b).map_err(err)?, alloc_digits),
        Expression::Setwin => {
            let set = parse_set(a.set.as_deref(), n)?;
            if let Some(k) = a.k {
                if k != set.len() {
                    return Err(format!("--k {k} does not match the set size {}", set.len()));
                }
            }
            row(&[set_win_probability(&q, &b, &set).map_err(err)?], digits)
        }
        Expression::Topk => row(&[top_k_inclusion_probability(&q, &b, size()?, index("i")?).map_err(err)?], digits),
        Expression::Myerson => row(&[myerson_expected_payment(&q, &b, index("i")?)], digits),
        Expression::Lsw => {
            let x = a.x.as_deref().ok_or("--x is required")?;
            if x.len() != n {
                return Err(format!("--x has {} entries, expected {n}", x.len()));
            }
            format!("{}\n{}", row(&[lsw(x, &q, &v)], digits), row(&[log_lsw(x, &q, &v)], digits))
        }
        Expression::LswMax => row(&lsw_maximizer(&q, &v).map_err(err)?, alloc_digits),
        Expression::CombAlloc => {
            let scores = SetScores::heuristic(&q, None, a.alpha, a.beta, size()?);
            let x = combinatorial_allocation(&scores, &b).map_err(err)?;
            set_lines(&scores, &x, alloc_digits)
        }
        Expression::Clsw => {
            let scores = SetScores::heuristic(&q, None, a.alpha, a.beta, size()?);
            let x = clsw_maximizer(&scores, &v).map_err(err)?;
            let value = clsw(&x, &scores, &v);
            format!("{}\n{}", set_lines(&scores, &x, alloc_digits), row(&[value], digits))
        }
        Expression::SetRelevance => {
            let set = parse_set(a.set.as_deref(), n)?;
            let r = set_relevance_heuristic(&q, None, a.alpha, a.beta, &set);
            format!("{}\n{}", row(&[r.q_set], digits), row(&r.members, digits))
        }
    };
    Ok(out)
}

fn set_lines(scores: &SetScores, x: &[f64], digits: usize) -> String {
    scores
        .sets
        .iter()
        .zip(x)
        .map(|(set, p)| {
            let members: Vec<String> = set.iter().map(usize::to_string).collect();
            format!("{} {p:.digits$}", members.join(","))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub(super) fn cmd_probe(a: &ProbeArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match evaluate(a) {
        Ok(text) => {
            let _ = writeln!(out, "{text}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INVALID
        }
    }
}
