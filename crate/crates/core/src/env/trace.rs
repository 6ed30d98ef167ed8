//! Per-step episode records and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::market::{NetOrderFlow, PriceBounds, Quote};

/// Rewards for one step, in dollars.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub informed: Option<f64>,
    pub liquidity: Option<f64>,
    pub makers: Vec<f64>,
}

impl Rewards {
    pub fn maker_sum(&self) -> f64 {
        self.makers.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index.
    pub n: usize,
    /// Clearing price of the previous step (opening price at `n = 1`), unticked.
    pub prior_vwap: f64,
    pub vwap_raw: f64,
    /// Clearing price on the penny grid.
    pub vwap: f64,
    pub flow: NetOrderFlow,
    /// Raw informed-trader action (beta or order size).
    pub informed_action: Option<f64>,
    pub theta: Option<f64>,
    /// Liquidity inventory still to buy before this step's order.
    pub inventory_before: Option<f64>,
    /// Liquidity inventory still to buy after this step's order.
    pub inventory_after: Option<f64>,
    pub maker_actions: Vec<f64>,
    /// Quotes as cleared: clipped prices and depth coefficients.
    pub quotes: Vec<Quote>,
    pub allocations: Vec<f64>,
    pub rewards: Rewards,
    /// Number of quotes whose depth coefficient was raised to the floor.
    pub depth_floor_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub variant: Variant,
    pub fundamental: f64,
    pub open_price: f64,
    pub bounds: PriceBounds,
    pub rows: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Ticked clearing prices `p^(0..=N)` including the opening price.
    pub fn price_path(&self) -> Vec<f64> {
        std::iter::once(self.open_price)
            .chain(self.rows.iter().map(|r| r.vwap))
            .collect()
    }

    pub fn liquidity_fills(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.flow_liquidity()).collect()
    }

    pub fn series(&self) -> EpisodeSeries {
        EpisodeSeries {
            fundamental: self.fundamental,
            open_price: self.open_price,
            vwap: self.rows.iter().map(|r| r.vwap).collect(),
            total_flow: self.rows.iter().map(|r| r.flow.total).collect(),
            liquidity: self.liquidity_fills(),
            inventory: self.rows.iter().map(|r| r.inventory_after).collect(),
        }
    }
}

impl StepRecord {
    fn flow_liquidity(&self) -> Option<f64> {
        self.theta.map(|_| self.flow.liquidity)
    }
}

/// The price/flow columns of one episode, enough for diagnostics and plots.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSeries {
    pub fundamental: f64,
    pub open_price: f64,
    /// Ticked clearing price per step `n = 1..=N`.
    pub vwap: Vec<f64>,
    pub total_flow: Vec<f64>,
    pub liquidity: Option<Vec<f64>>,
    pub inventory: Option<Vec<f64>>,
}

impl EpisodeSeries {
    pub fn price_path(&self) -> Vec<f64> {
        std::iter::once(self.open_price).chain(self.vwap.iter().copied()).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceCsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("missing column {0}")]
    MissingColumn(&'static str),
    #[error("bad value in column {column}, row {row}: {value:?}")]
    BadValue {
        column: &'static str,
        row: usize,
        value: String,
    },
    #[error("no trace rows")]
    Empty,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes episodes as one CSV table: a `# manifest:` comment line, then one
/// row per step. Columns for traders absent from the variant are omitted.
pub fn write_traces_csv<W: Write>(
    mut out: W,
    traces: &[EpisodeTrace],
    manifest_hash: &str,
) -> Result<(), TraceCsvError> {
    writeln!(out, "# manifest: {manifest_hash}")?;
    let Some(first) = traces.first() else {
        return Err(TraceCsvError::Empty);
    };
    let has_it = first.variant.has_informed();
    let has_lt = first.variant.has_liquidity();
    let makers = first.rows.first().map_or(0, |r| r.quotes.len());

    let mut header: Vec<String> = ["episode", "n", "v", "vwap", "q_total"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if has_it {
        header.push("x_it".into());
    }
    if has_lt {
        header.push("x_lt".into());
    }
    header.push("u".into());
    if has_lt {
        header.push("Q_remaining".into());
    }
    if has_it {
        header.push("reward_it".into());
    }
    if has_lt {
        header.push("reward_lt".into());
    }
    header.extend(["reward_mm_sum", "open_price", "vwap_raw"].map(String::from));
    for i in 0..makers {
        header.extend([format!("quote_{i}"), format!("lambda_{i}"), format!("alloc_{i}")]);
    }

    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    for (episode, trace) in traces.iter().enumerate() {
        for r in &trace.rows {
            let mut rec = vec![
                episode.to_string(),
                r.n.to_string(),
                trace.fundamental.to_string(),
                r.vwap.to_string(),
                r.flow.total.to_string(),
            ];
            if has_it {
                rec.push(r.flow.informed.to_string());
            }
            if has_lt {
                rec.push(r.flow.liquidity.to_string());
            }
            rec.push(r.flow.noise.to_string());
            if has_lt {
                rec.push(fmt_opt(r.inventory_after));
            }
            if has_it {
                rec.push(fmt_opt(r.rewards.informed));
            }
            if has_lt {
                rec.push(fmt_opt(r.rewards.liquidity));
            }
            rec.push(r.rewards.maker_sum().to_string());
            rec.push(trace.open_price.to_string());
            rec.push(r.vwap_raw.to_string());
            for (q, a) in r.quotes.iter().zip(&r.allocations) {
                rec.extend([q.price.to_string(), q.lambda.to_string(), a.to_string()]);
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the table written by [`write_traces_csv`] back into per-episode
/// series. Rows must be grouped by episode.
pub fn read_traces_csv<R: Read>(input: R) -> Result<Vec<EpisodeSeries>, TraceCsvError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(TraceCsvError::MissingColumn(name))
    };
    let (c_ep, c_v, c_vwap, c_q, c_open) =
        (col("episode")?, col("v")?, col("vwap")?, col("q_total")?, col("open_price")?);
    let c_xlt = col("x_lt").ok();
    let c_inv = col("Q_remaining").ok();

    let mut out: Vec<EpisodeSeries> = Vec::new();
    let mut current: Option<String> = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize, column: &'static str| -> Result<f64, TraceCsvError> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>().map_err(|_| TraceCsvError::BadValue {
                column,
                row,
                value: s.to_string(),
            })
        };
        let episode = rec.get(c_ep).unwrap_or("").to_string();
        if current.as_deref() != Some(episode.as_str()) {
            out.push(EpisodeSeries {
                fundamental: num(c_v, "v")?,
                open_price: num(c_open, "open_price")?,
                vwap: Vec::new(),
                total_flow: Vec::new(),
                liquidity: c_xlt.map(|_| Vec::new()),
                inventory: c_inv.map(|_| Vec::new()),
            });
            current = Some(episode);
        }
        let s = out.last_mut().expect("pushed above");
        s.vwap.push(num(c_vwap, "vwap")?);
        s.total_flow.push(num(c_q, "q_total")?);
        if let (Some(c), Some(v)) = (c_xlt, s.liquidity.as_mut()) {
            v.push(num(c, "x_lt")?);
        }
        if let (Some(c), Some(v)) = (c_inv, s.inventory.as_mut()) {
            v.push(num(c, "Q_remaining")?);
        }
    }
    if out.is_empty() {
        return Err(TraceCsvError::Empty);
    }
    Ok(out)
}
