use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::agent::AgentParams;
use crate::error::{Error, Result};
use crate::experiments::{domain, substream};

/// Cost coefficients of MovieLens agents are drawn from `U(BETA_LO, BETA_HI)`.
pub const BETA_LO: f64 = 0.5;
pub const BETA_HI: f64 = 5.0;

/// Lines reported individually in the ingest report.
const MAX_REPORTED: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovieLensRecord {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: u8,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IngestMode {
    Strict,
    #[default]
    Lenient,
}

impl FromStr for IngestMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(IngestMode::Strict),
            "lenient" => Ok(IngestMode::Lenient),
            other => Err(Error::invalid(
                "ingest mode",
                format!("expected strict or lenient, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub users: usize,
    pub records: usize,
    pub malformed: usize,
    /// First few skipped lines as `(line number, reason)`.
    pub skipped: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSummary {
    pub user_id: u32,
    pub ratings: usize,
    pub mean_rating: f64,
}

/// Per-user rating summaries, ordered by user id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieLensData {
    pub users: Vec<UserSummary>,
    pub report: IngestReport,
}

/// `5 + 15 (r - 1) / 4`: mean ratings in `[1, 5]` onto alphas in `[5, 20]`.
pub fn alpha_from_mean_rating(mean_rating: f64) -> f64 {
    5.0 + 15.0 * (mean_rating - 1.0) / 4.0
}

/// One tab-separated `user item rating timestamp` line.
pub fn parse_udata_line(line: &str) -> std::result::Result<MovieLensRecord, String> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 tab-separated fields, found {}", fields.len()));
    }
    let id = |name: &str, s: &str| -> std::result::Result<u32, String> {
        match s.trim().parse::<u32>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(format!("{name} `{s}` is not a positive integer")),
        }
    };
    let user_id = id("user id", fields[0])?;
    let item_id = id("item id", fields[1])?;
    let rating = match fields[2].trim().parse::<u8>() {
        Ok(r @ 1..=5) => r,
        _ => return Err(format!("rating `{}` is not in 1..=5", fields[2])),
    };
    let timestamp = fields[3]
        .trim()
        .parse::<i64>()
        .map_err(|_| format!("timestamp `{}` is not an integer", fields[3]))?;
    Ok(MovieLensRecord {
        user_id,
        item_id,
        rating,
        timestamp,
    })
}

/// Reads a `u.data` ratings file and summarizes it per user. In strict mode
/// the first malformed line aborts; in lenient mode it is skipped and counted.
pub fn load_movielens(path: impl AsRef<Path>, mode: IngestMode) -> Result<MovieLensData> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut per_user: BTreeMap<u32, (usize, u64)> = BTreeMap::new();
    let mut report = IngestReport::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                if mode == IngestMode::Strict {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "invalid UTF-8".into(),
                    });
                }
                report.malformed += 1;
                if report.skipped.len() < MAX_REPORTED {
                    report.skipped.push((line_no, "invalid UTF-8".into()));
                }
                continue;
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        if line.trim().is_empty() {
            continue;
        }
        match parse_udata_line(&line) {
            Ok(rec) => {
                let entry = per_user.entry(rec.user_id).or_default();
                entry.0 += 1;
                entry.1 += u64::from(rec.rating);
                report.records += 1;
            }
            Err(message) if mode == IngestMode::Strict => {
                return Err(Error::Parse { line: line_no, message });
            }
            Err(message) => {
                report.malformed += 1;
                if report.skipped.len() < MAX_REPORTED {
                    report.skipped.push((line_no, message));
                }
            }
        }
    }
    let users: Vec<UserSummary> = per_user
        .into_iter()
        .map(|(user_id, (count, sum))| UserSummary {
            user_id,
            ratings: count,
            mean_rating: sum as f64 / count as f64,
        })
        .collect();
    report.users = users.len();
    Ok(MovieLensData { users, report })
}

impl MovieLensData {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// One agent per user: alpha from the mean rating, beta uniform on
    /// `[0.5, 5]` from a stream keyed by `seed` and the user id.
    pub fn population(&self, seed: u64) -> Result<Vec<AgentParams>> {
        let beta = Uniform::new_inclusive(BETA_LO, BETA_HI).expect("valid bounds");
        self.users
            .iter()
            .map(|u| {
                let mut rng = substream(seed, domain::MOVIELENS_COST, u64::from(u.user_id));
                AgentParams::new(
                    u64::from(u.user_id),
                    alpha_from_mean_rating(u.mean_rating),
                    beta.sample(&mut rng),
                )
            })
            .collect()
    }

    /// Default capacity: one unit per five users.
    pub fn default_capacity(&self) -> f64 {
        self.users.len() as f64 / 5.0
    }

    pub fn mean_alpha(&self) -> f64 {
        if self.users.is_empty() {
            return 0.0;
        }
        self.users
            .iter()
            .map(|u| alpha_from_mean_rating(u.mean_rating))
            .sum::<f64>()
            / self.users.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_published_layout() {
        let rec = parse_udata_line("196\t242\t3\t881250949").unwrap();
        assert_eq!(
            rec,
            MovieLensRecord {
                user_id: 196,
                item_id: 242,
                rating: 3,
                timestamp: 881250949
            }
        );
        assert!(parse_udata_line("196 242 3 881250949").is_err());
        assert!(parse_udata_line("196\t242\t6\t881250949").is_err());
        assert!(parse_udata_line("0\t242\t3\t881250949").is_err());
    }

    #[test]
    fn alpha_mapping() {
        assert_eq!(alpha_from_mean_rating(3.0), 12.5);
        assert_eq!(alpha_from_mean_rating(5.0), 20.0);
        assert_eq!(alpha_from_mean_rating(1.0), 5.0);
    }

    #[test]
    fn lenient_skips_and_strict_aborts() {
        let f = file("1\t10\t3\t1\n1\t11\t3\t2\nbroken line\n2\t10\t5\t3\n\n");
        let data = load_movielens(f.path(), IngestMode::Lenient).unwrap();
        assert_eq!(data.report.users, 2);
        assert_eq!(data.report.records, 3);
        assert_eq!(data.report.malformed, 1);
        assert_eq!(data.report.skipped[0].0, 3);
        let pop = data.population(7).unwrap();
        assert_eq!(pop[0].alpha(), 12.5);
        assert_eq!(pop[1].alpha(), 20.0);
        assert_eq!(pop, data.population(7).unwrap());
        assert!(pop.iter().all(|a| (BETA_LO..=BETA_HI).contains(&a.beta())));

        match load_movielens(f.path(), IngestMode::Strict) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn beta_depends_on_user_not_position() {
        let a = load_movielens(file("5\t1\t4\t0\n9\t1\t2\t0\n").path(), IngestMode::Strict).unwrap();
        let b = load_movielens(file("9\t1\t2\t0\n").path(), IngestMode::Strict).unwrap();
        assert_eq!(a.population(1).unwrap()[1], b.population(1).unwrap()[0]);
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(
            load_movielens("/nonexistent/u.data", IngestMode::Lenient),
            Err(Error::Io { .. })
        ));
    }
}
