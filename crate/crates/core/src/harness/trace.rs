//! Per-round CSV trace.
//!
//! Reals are written as `{:.16e}` (17 significant digits), which round-trips
//! every `f64` exactly. Runs longer than the row limit keep every
//! `⌈T/limit⌉`-th round plus every round whose phase differs from the round
//! before it.

use crate::policy::Phase;

pub const HEADER: &str = "t,phase,k,k_prime,p,q,s,b,bit_s,bit_b,traded,gft,egft_posted,egft_opt,regret_inc,cum_regret,profit,cum_profit,budget_remaining";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub phase: Phase,
    pub k: Option<i64>,
    pub k_prime: Option<i64>,
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub b: f64,
    pub bit_s: bool,
    pub bit_b: bool,
    pub traded: bool,
    pub gft: f64,
    pub egft_posted: f64,
    pub egft_opt: f64,
    pub regret_inc: f64,
    pub cum_regret: f64,
    pub profit: f64,
    pub cum_profit: f64,
    /// One-bit runs only.
    pub budget_remaining: Option<f64>,
}

fn real(out: &mut String, v: f64) {
    use std::fmt::Write;
    write!(out, "{v:.16e}").expect("string write");
}

impl TraceRow {
    pub fn write_csv(&self, out: &mut String) {
        use std::fmt::Write;
        let opt_int = |v: Option<i64>| v.map(|k| k.to_string()).unwrap_or_default();
        write!(out, "{},{},{},{},", self.t, self.phase.as_str(), opt_int(self.k), opt_int(self.k_prime)).expect("string write");
        for v in [self.p, self.q, self.s, self.b] {
            real(out, v);
            out.push(',');
        }
        for bit in [self.bit_s, self.bit_b, self.traded] {
            out.push(if bit { '1' } else { '0' });
            out.push(',');
        }
        for v in [self.gft, self.egft_posted, self.egft_opt, self.regret_inc, self.cum_regret, self.profit, self.cum_profit] {
            real(out, v);
            out.push(',');
        }
        if let Some(v) = self.budget_remaining {
            real(out, v);
        }
        out.push('\n');
    }
}

/// Buffered trace with downsampling.
#[derive(Debug)]
pub struct TraceWriter {
    stride: usize,
    last_phase: Option<Phase>,
    buf: String,
    rows: usize,
}

impl TraceWriter {
    pub fn new(horizon: usize, max_rows: usize) -> Self {
        let stride = if horizon <= max_rows { 1 } else { horizon.div_ceil(max_rows) };
        let mut buf = String::with_capacity(256 * horizon.min(max_rows) + HEADER.len() + 1);
        buf.push_str(HEADER);
        buf.push('\n');
        Self { stride, last_phase: None, buf, rows: 0 }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Whether round `t` with `phase` is kept; must be called once per round
    /// in order.
    pub fn keep(&mut self, t: usize, phase: Phase) -> bool {
        let transition = self.last_phase != Some(phase);
        self.last_phase = Some(phase);
        t.is_multiple_of(self.stride) || transition
    }

    pub fn push(&mut self, row: &TraceRow) {
        row.write_csv(&mut self.buf);
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

/// Parsed trace row, for checks that read traces back.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub t: usize,
    pub phase: String,
    pub fields: Vec<String>,
}

impl ParsedRow {
    pub fn real(&self, column: &str) -> f64 {
        let idx = HEADER.split(',').position(|h| h == column).expect("known column");
        self.fields[idx].parse().expect("real column")
    }
}

pub fn parse_trace(text: &str) -> Vec<ParsedRow> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    lines
        .map(|l| {
            let fields: Vec<String> = l.split(',').map(str::to_string).collect();
            ParsedRow { t: fields[0].parse().expect("round index"), phase: fields[1].clone(), fields }
        })
        .collect()
}
