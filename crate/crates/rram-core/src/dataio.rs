//! Ratings ingestion, train/test splitting, and trace export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::sampled::SampledMatrix;

/// A ratings table with ids remapped to dense 0-based indices.
///
/// Index order follows the sorted original ids, so the mapping is a pure
/// function of the file contents.
#[derive(Debug, Clone)]
pub struct RatingsDataset {
    m: usize,
    n: usize,
    triples: Vec<(usize, usize, f64)>,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
}

impl RatingsDataset {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[(usize, usize, f64)] {
        &self.triples
    }

    /// Original id of a dense user index.
    pub fn user_id(&self, idx: usize) -> u64 {
        self.user_ids[idx]
    }

    /// Original id of a dense item index.
    pub fn item_id(&self, idx: usize) -> u64 {
        self.item_ids[idx]
    }
}

/// Supported ratings file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MovieLensFormat {
    /// Tab-separated `user item rating timestamp`.
    Ml100k,
    /// `user::item::rating::timestamp`.
    Ml1m,
}

impl std::str::FromStr for MovieLensFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml-100k" => Ok(MovieLensFormat::Ml100k),
            "ml-1m" => Ok(MovieLensFormat::Ml1m),
            other => Err(Error::invalid(format!("unknown ratings format `{other}`"))),
        }
    }
}

fn split_fields<'a>(line: &'a str, format: MovieLensFormat) -> Vec<&'a str> {
    match format {
        MovieLensFormat::Ml100k => line.split('\t').collect(),
        MovieLensFormat::Ml1m => line.split("::").collect(),
    }
}

/// Parses a ratings file; timestamps are discarded, ids are remapped to
/// dense indices, duplicate (user, item) pairs are an error.
pub fn parse_movielens(path: &Path, format: MovieLensFormat) -> Result<RatingsDataset> {
    let file = File::open(path)?;
    parse_movielens_reader(BufReader::new(file), format)
}

/// Reader-based variant of [`parse_movielens`].
pub fn parse_movielens_reader<R: BufRead>(
    reader: R,
    format: MovieLensFormat,
) -> Result<RatingsDataset> {
    let mut raw: Vec<(u64, u64, f64)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(&line, format);
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let user: u64 = fields[0].trim().parse().map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("bad user id `{}`: {e}", fields[0]),
        })?;
        let item: u64 = fields[1].trim().parse().map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("bad item id `{}`: {e}", fields[1]),
        })?;
        let rating: f64 = fields[2].trim().parse().map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("bad rating `{}`: {e}", fields[2]),
        })?;
        if !(1.0..=5.0).contains(&rating) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("rating {rating} outside [1, 5]"),
            });
        }
        raw.push((user, item, rating));
    }
    if raw.is_empty() {
        return Err(Error::invalid("ratings file contains no data"));
    }

    let mut user_ids: Vec<u64> = raw.iter().map(|t| t.0).collect();
    user_ids.sort_unstable();
    user_ids.dedup();
    let mut item_ids: Vec<u64> = raw.iter().map(|t| t.1).collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let user_index = |id: u64| user_ids.binary_search(&id).expect("id present");
    let item_index = |id: u64| item_ids.binary_search(&id).expect("id present");

    let mut triples: Vec<(usize, usize, f64)> = raw
        .iter()
        .map(|&(u, i, r)| (user_index(u), item_index(i), r))
        .collect();
    let mut check = triples.iter().map(|t| (t.0, t.1)).collect::<Vec<_>>();
    check.sort_unstable();
    for w in check.windows(2) {
        if w[0] == w[1] {
            return Err(Error::invalid(format!(
                "duplicate rating for user id {}, item id {}",
                user_ids[w[0].0], item_ids[w[0].1]
            )));
        }
    }
    triples.sort_unstable_by_key(|&(u, i, _)| (u, i));
    Ok(RatingsDataset {
        m: user_ids.len(),
        n: item_ids.len(),
        triples,
        user_ids,
        item_ids,
    })
}

/// Uniform random partition into train and test sampled matrices.
///
/// Both sides keep the full m×n dimensions, so users or items that only
/// appear in the test set leave legitimately empty rows in the train
/// matrix. Train size is round(fraction·N).
pub fn split_train_test(
    ds: &RatingsDataset,
    fraction: f64,
    seed: u64,
) -> Result<(SampledMatrix, SampledMatrix)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("split fraction must lie in (0,1)"));
    }
    let total = ds.len();
    let train_size = (fraction * total as f64).round() as usize;
    if train_size == 0 || train_size == total {
        return Err(Error::invalid("split leaves one side empty"));
    }
    let mut rng = stream_rng(seed, Stream::Split);
    let chosen = sample(&mut rng, total, train_size);
    let mut in_train = vec![false; total];
    for idx in chosen {
        in_train[idx] = true;
    }
    let mut train = Vec::with_capacity(train_size);
    let mut test = Vec::with_capacity(total - train_size);
    for (idx, &(u, i, r)) in ds.triples.iter().enumerate() {
        if in_train[idx] {
            train.push((u, i, r));
        } else {
            test.push((u, i, r));
        }
    }
    Ok((
        SampledMatrix::new(ds.m, ds.n, train)?,
        SampledMatrix::new(ds.m, ds.n, test)?,
    ))
}

/// One exported trace row; the schema is shared by solver iterations and
/// rank events.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub time_s: f64,
    pub f: f64,
    pub rel_grad: f64,
    pub rel_res: f64,
    pub rel_change: Option<f64>,
    pub rank: usize,
    pub event: String,
}

/// Export format selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Json,
}

/// Run metadata carried in the JSON header.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub config: String,
    pub seed: u64,
    pub git_describe: String,
}

#[derive(Serialize)]
struct JsonTrace<'a> {
    meta: &'a RunMeta,
    rows: &'a [TraceRow],
}

fn fmt_float(v: f64) -> String {
    // `{}` on f64 is shortest-round-trip, so re-parsing recovers the bits.
    format!("{v}")
}

/// Serializes rows as CSV with the fixed eight-column schema.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], w: &mut W) -> Result<()> {
    writeln!(w, "iter,time_s,f,rel_grad,rel_res,rel_change,rank,event")?;
    for r in rows {
        let change = r.rel_change.map(fmt_float).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.iter,
            fmt_float(r.time_s),
            fmt_float(r.f),
            fmt_float(r.rel_grad),
            fmt_float(r.rel_res),
            change,
            r.rank,
            r.event
        )?;
    }
    Ok(())
}

/// Parses CSV produced by [`write_trace_csv`].
pub fn parse_trace_csv<R: BufRead>(r: R) -> Result<Vec<TraceRow>> {
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h == "iter,time_s,f,rel_grad,rel_res,rel_change,rank,event" => {}
        Some((_, Ok(h))) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected header `{h}`"),
            })
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(Error::Parse { line: 1, msg: "empty trace".into() }),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad float `{s}`: {e}"),
            })
        };
        rows.push(TraceRow {
            iter: fields[0].parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad iter: {e}"),
            })?,
            time_s: parse_f(fields[1])?,
            f: parse_f(fields[2])?,
            rel_grad: parse_f(fields[3])?,
            rel_res: parse_f(fields[4])?,
            rel_change: if fields[5].is_empty() {
                None
            } else {
                Some(parse_f(fields[5])?)
            },
            rank: fields[6].parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad rank: {e}"),
            })?,
            event: fields[7].to_string(),
        });
    }
    Ok(rows)
}

/// Writes rows (and metadata, for JSON) to `path`.
pub fn export_trace(
    rows: &[TraceRow],
    path: &Path,
    format: TraceFormat,
    meta: &RunMeta,
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    match format {
        TraceFormat::Csv => write_trace_csv(rows, &mut w)?,
        TraceFormat::Json => {
            let doc = JsonTrace { meta, rows };
            serde_json::to_writer_pretty(&mut w, &doc)
                .map_err(|e| Error::invalid(format!("json serialization failed: {e}")))?;
            writeln!(&mut w)?;
        }
    }
    w.flush()?;
    Ok(())
}
