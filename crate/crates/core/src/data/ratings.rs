use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::autoenc::is_on_grid;
use crate::error::{Error, Result};
use crate::nn::{streams, RngStream};

/// One observed rating with dense (remapped) ids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub value: f32,
    pub timestamp: Option<i64>,
}

/// Bijection between raw ids and contiguous dense ids, ascending by raw id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<u64>,
}

impl IdMap {
    fn from_raw(mut raw: Vec<u64>) -> Self {
        raw.sort_unstable();
        raw.dedup();
        IdMap { raw }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn dense(&self, raw: u64) -> Option<u32> {
        self.raw.binary_search(&raw).ok().map(|i| i as u32)
    }

    pub fn raw(&self, dense: u32) -> u64 {
        self.raw[dense as usize]
    }

    /// `(raw, dense)` pairs in dense order.
    pub fn pairs(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.raw.iter().enumerate().map(|(d, &r)| (r, d as u32))
    }
}

/// Raw rating file layouts accepted by [`RatingTable::ingest`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`, no header.
    Tab4,
    /// Comma-separated with the header `userId,movieId,rating,timestamp`.
    CsvHeader,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tab4" => Ok(InputFormat::Tab4),
            "csv-header" => Ok(InputFormat::CsvHeader),
            _ => Err(format!("unknown format `{s}` (expected tab4 or csv-header)")),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::Tab4 => "tab4",
            InputFormat::CsvHeader => "csv-header",
        })
    }
}

/// Ratings with their id maps.
///
/// Ratings are unique per (user, item) and sorted by (user, item).
#[derive(Clone, Debug, PartialEq)]
pub struct RatingTable {
    ratings: Vec<Rating>,
    users: IdMap,
    items: IdMap,
}

pub const CANONICAL_RATINGS: &str = "ratings.csv";
pub const CANONICAL_USERS: &str = "users.csv";
pub const CANONICAL_ITEMS: &str = "items.csv";

struct RawRating {
    user: u64,
    item: u64,
    value: f32,
    timestamp: Option<i64>,
}

fn parse_field<T: FromStr>(field: Option<&str>, what: &str, line: usize) -> Result<T> {
    let field = field.map(str::trim).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {what}"),
    })?;
    field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("malformed {what} `{field}`"),
    })
}

impl RatingTable {
    /// Builds a table from raw-id records; later duplicates replace earlier ones.
    fn from_raw(records: Vec<RawRating>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let users = IdMap::from_raw(records.iter().map(|r| r.user).collect());
        let items = IdMap::from_raw(records.iter().map(|r| r.item).collect());
        let mut latest: HashMap<(u32, u32), Rating> = HashMap::with_capacity(records.len());
        for r in records {
            let user = users.dense(r.user).expect("user in map");
            let item = items.dense(r.item).expect("item in map");
            latest.insert(
                (user, item),
                Rating {
                    user,
                    item,
                    value: r.value,
                    timestamp: r.timestamp,
                },
            );
        }
        let mut ratings: Vec<Rating> = latest.into_values().collect();
        ratings.sort_unstable_by_key(|r| (r.user, r.item));
        Ok(RatingTable { ratings, users, items })
    }

    pub fn parse(text: &str, format: InputFormat) -> Result<Self> {
        let mut records = Vec::new();
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let sep = match format {
            InputFormat::Tab4 => '\t',
            InputFormat::CsvHeader => {
                match lines.next() {
                    Some((_, header)) if header.trim() == "userId,movieId,rating,timestamp" => {}
                    Some((line, header)) => {
                        return Err(Error::Parse {
                            line,
                            message: format!("expected header `userId,movieId,rating,timestamp`, got `{header}`"),
                        })
                    }
                    None => return Err(Error::EmptyDataset),
                }
                ','
            }
        };
        for (line, text) in lines {
            if text.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = text.split(sep).collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 4 fields, found {}", fields.len()),
                });
            }
            let value: f32 = parse_field(Some(fields[2]), "rating", line)?;
            if !is_on_grid(value as f64) {
                return Err(Error::Parse {
                    line,
                    message: format!("rating {value} is not one of 1.0, 1.5, …, 5.0"),
                });
            }
            let timestamp = if fields[3].trim().is_empty() {
                None
            } else {
                Some(parse_field(Some(fields[3]), "timestamp", line)?)
            };
            records.push(RawRating {
                user: parse_field(Some(fields[0]), "user id", line)?,
                item: parse_field(Some(fields[1]), "item id", line)?,
                value,
                timestamp,
            });
        }
        Self::from_raw(records)
    }

    /// Reads a raw rating file.
    pub fn ingest(path: &Path, format: InputFormat) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, format)
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    /// Same id maps, different rating set.
    fn with_ratings(&self, ratings: Vec<Rating>) -> Self {
        RatingTable {
            ratings,
            users: self.users.clone(),
            items: self.items.clone(),
        }
    }

    /// Record-level Bernoulli split: each rating goes to the test side when a
    /// seeded uniform draw falls below `test_rate`. Both halves keep the full
    /// id maps so their pivots share dimensions.
    pub fn split(&self, test_rate: f64, seed: u64) -> Result<(RatingTable, RatingTable)> {
        crate::nn::check_probability(test_rate)?;
        let mut rng = RngStream::new(seed).fork(streams::SPLIT);
        let (test, train): (Vec<Rating>, Vec<Rating>) = self.ratings.iter().partition(|_| rng.uniform() < test_rate);
        Ok((self.with_ratings(train), self.with_ratings(test)))
    }

    /// Keeps each rating with probability `fraction` and remaps ids over the
    /// survivors.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<RatingTable> {
        let mut rng = RngStream::new(seed).fork(streams::SUBSAMPLE);
        let records = self
            .ratings
            .iter()
            .filter(|_| rng.uniform() < fraction)
            .map(|r| RawRating {
                user: self.users.raw(r.user),
                item: self.items.raw(r.item),
                value: r.value,
                timestamp: r.timestamp,
            })
            .collect();
        Self::from_raw(records)
    }

    /// Writes `ratings.csv` (`row_id,col_id,rating`, dense user and item ids)
    /// plus `users.csv` and `items.csv` (`raw_id,dense_id`).
    pub fn write_canonical(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join(CANONICAL_RATINGS))?;
        w.write_record(["row_id", "col_id", "rating"])?;
        for r in &self.ratings {
            w.write_record([r.user.to_string(), r.item.to_string(), r.value.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir.join(CANONICAL_RATINGS), e))?;
        for (name, map) in [(CANONICAL_USERS, &self.users), (CANONICAL_ITEMS, &self.items)] {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            w.write_record(["raw_id", "dense_id"])?;
            for (raw, dense) in map.pairs() {
                w.write_record([raw.to_string(), dense.to_string()])?;
            }
            w.flush().map_err(|e| Error::io(dir.join(name), e))?;
        }
        Ok(())
    }

    /// Reads a directory written by [`RatingTable::write_canonical`].
    pub fn load_canonical(dir: &Path) -> Result<Self> {
        let read_map = |name: &str| -> Result<IdMap> {
            let mut r = csv::Reader::from_path(dir.join(name))?;
            let mut raw = Vec::new();
            for (i, rec) in r.records().enumerate() {
                let rec = rec?;
                let line = i + 2;
                let raw_id: u64 = parse_field(rec.get(0), "raw_id", line)?;
                let dense: usize = parse_field(rec.get(1), "dense_id", line)?;
                if dense != raw.len() {
                    return Err(Error::Parse {
                        line,
                        message: format!("{name}: dense ids must be contiguous from 0"),
                    });
                }
                raw.push(raw_id);
            }
            if raw.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("{name}: raw ids must ascend with dense ids"),
                });
            }
            Ok(IdMap { raw })
        };
        let users = read_map(CANONICAL_USERS)?;
        let items = read_map(CANONICAL_ITEMS)?;
        let mut r = csv::Reader::from_path(dir.join(CANONICAL_RATINGS))?;
        let mut ratings = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let user: u32 = parse_field(rec.get(0), "row_id", line)?;
            let item: u32 = parse_field(rec.get(1), "col_id", line)?;
            let value: f32 = parse_field(rec.get(2), "rating", line)?;
            if user as usize >= users.len() || item as usize >= items.len() || !is_on_grid(value as f64) {
                return Err(Error::Parse {
                    line,
                    message: "id out of range or rating off grid".into(),
                });
            }
            ratings.push(Rating {
                user,
                item,
                value,
                timestamp: None,
            });
        }
        if ratings.is_empty() {
            return Err(Error::EmptyDataset);
        }
        ratings.sort_unstable_by_key(|r| (r.user, r.item));
        if ratings.windows(2).any(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item)) {
            return Err(Error::Parse {
                line: 0,
                message: "duplicate (row_id, col_id) pair".into(),
            });
        }
        Ok(RatingTable { ratings, users, items })
    }
}
