//! MovieLens-1M adapter.
//!
//! Expects the `ml-1m` layout: `movies.dat`, `ratings.dat`, `users.dat`,
//! `::`-separated latin-1 text. Each user is a task, each movie an arm whose
//! context is the indicator vector of its genres scaled to unit length.
//! Ratings `1..=5` map to `(r − 1)/4 ∈ [0, 1]`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand_chacha::ChaCha8Rng;

use super::{Environment, Round};
use crate::error::{Error, Result};
use crate::policy::ArmSet;

/// The fixed ml-1m genre vocabulary; context coordinate `i` is `GENRES[i]`.
pub const GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

/// Which users form the task population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupFilter {
    #[default]
    All,
    /// `M` or `F`.
    Gender(char),
    /// ml-1m occupation code `0..=20`.
    Occupation(u8),
}

impl fmt::Display for GroupFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupFilter::All => f.write_str("all"),
            GroupFilter::Gender(g) => write!(f, "gender:{g}"),
            GroupFilter::Occupation(o) => write!(f, "occupation:{o}"),
        }
    }
}

impl FromStr for GroupFilter {
    type Err = Error;

    /// `all`, `gender:M`, `gender:F`, `occupation:<0-20>` (alias `profession:`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad group filter {s:?}"));
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(GroupFilter::All);
        }
        let (key, val) = s.split_once(':').ok_or_else(bad)?;
        match key.to_ascii_lowercase().as_str() {
            "gender" => match val.trim().to_ascii_uppercase().as_str() {
                "M" => Ok(GroupFilter::Gender('M')),
                "F" => Ok(GroupFilter::Gender('F')),
                _ => Err(bad()),
            },
            "occupation" | "profession" => {
                let code: u8 = val.trim().parse().map_err(|_| bad())?;
                if code > 20 {
                    return Err(bad());
                }
                Ok(GroupFilter::Occupation(code))
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRatings {
    pub user_id: u32,
    /// `(movie id, normalized rating)`, one entry per distinct movie.
    pub ratings: Vec<(u32, f64)>,
}

#[derive(Debug, Clone)]
pub struct MovieLensEnv {
    contexts: HashMap<u32, DVector<f64>>,
    users: Vec<UserRatings>,
    arms_per_round: usize,
    group: GroupFilter,
}

fn read_latin1(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

fn fields<'a>(line: &'a str, n: usize, file: &Path, lineno: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split("::").collect();
    if parts.len() != n {
        return Err(Error::Parse {
            file: file.to_path_buf(),
            line: lineno,
            msg: format!("expected {n} `::`-separated fields, got {}", parts.len()),
        });
    }
    Ok(parts)
}

fn parse_num<T: FromStr>(s: &str, what: &str, file: &Path, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: format!("bad {what} {s:?}"),
    })
}

/// Genre indicator sum divided by its Euclidean norm.
pub(crate) fn genre_context(genres: &str, file: &Path, line: usize) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(GENRES.len());
    for g in genres.split('|').map(str::trim).filter(|g| !g.is_empty()) {
        let i = GENRES
            .iter()
            .position(|&known| known == g)
            .ok_or_else(|| Error::MissingGenre {
                genre: g.to_string(),
                file: file.to_path_buf(),
                line,
            })?;
        x[i] = 1.0;
    }
    let n = x.norm();
    if n == 0.0 {
        return Err(Error::Parse {
            file: file.to_path_buf(),
            line,
            msg: "movie has no genres".into(),
        });
    }
    Ok(x / n)
}

impl MovieLensEnv {
    /// Loads `dir/{movies,ratings,users}.dat`, keeps users in `group` with at
    /// least `2·arms_per_round` distinct rated movies.
    pub fn load(dir: &Path, group: GroupFilter, arms_per_round: usize) -> Result<Self> {
        if arms_per_round == 0 {
            return Err(Error::InvalidConfig("arms_per_round must be >= 1".into()));
        }
        let movies_path = dir.join("movies.dat");
        let mut contexts = HashMap::new();
        for (i, line) in read_latin1(&movies_path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f = fields(line, 3, &movies_path, i + 1)?;
            let id: u32 = parse_num(f[0], "movie id", &movies_path, i + 1)?;
            contexts.insert(id, genre_context(f[2], &movies_path, i + 1)?);
        }

        let users_path = dir.join("users.dat");
        let mut members = Vec::new();
        for (i, line) in read_latin1(&users_path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f = fields(line, 5, &users_path, i + 1)?;
            let id: u32 = parse_num(f[0], "user id", &users_path, i + 1)?;
            let gender = f[1].trim().chars().next().unwrap_or('?');
            let occupation: u8 = parse_num(f[3], "occupation", &users_path, i + 1)?;
            let keep = match group {
                GroupFilter::All => true,
                GroupFilter::Gender(g) => gender == g,
                GroupFilter::Occupation(o) => occupation == o,
            };
            if keep {
                members.push(id);
            }
        }
        members.sort_unstable();

        let ratings_path = dir.join("ratings.dat");
        let mut by_user: BTreeMap<u32, BTreeMap<u32, f64>> = BTreeMap::new();
        for (i, line) in read_latin1(&ratings_path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f = fields(line, 4, &ratings_path, i + 1)?;
            let user: u32 = parse_num(f[0], "user id", &ratings_path, i + 1)?;
            if members.binary_search(&user).is_err() {
                continue;
            }
            let movie: u32 = parse_num(f[1], "movie id", &ratings_path, i + 1)?;
            let rating: f64 = parse_num(f[2], "rating", &ratings_path, i + 1)?;
            if !(1.0..=5.0).contains(&rating) {
                return Err(Error::Parse {
                    file: ratings_path.clone(),
                    line: i + 1,
                    msg: format!("rating {rating} outside 1..=5"),
                });
            }
            if !contexts.contains_key(&movie) {
                return Err(Error::Parse {
                    file: ratings_path.clone(),
                    line: i + 1,
                    msg: format!("rating for unknown movie {movie}"),
                });
            }
            by_user.entry(user).or_default().insert(movie, normalize_rating(rating));
        }

        let users: Vec<UserRatings> = by_user
            .into_iter()
            .filter(|(_, r)| r.len() >= 2 * arms_per_round)
            .map(|(user_id, r)| UserRatings {
                user_id,
                ratings: r.into_iter().collect(),
            })
            .collect();
        if users.is_empty() {
            return Err(Error::EmptyGroup(format!(
                "no users in group {group} with >= {} rated movies under {}",
                2 * arms_per_round,
                dir.display()
            )));
        }
        Ok(Self {
            contexts,
            users,
            arms_per_round,
            group,
        })
    }

    pub fn users(&self) -> &[UserRatings] {
        &self.users
    }

    pub fn group(&self) -> GroupFilter {
        self.group
    }

    pub fn arms_per_round(&self) -> usize {
        self.arms_per_round
    }

    pub fn context(&self, movie: u32) -> Option<&DVector<f64>> {
        self.contexts.get(&movie)
    }

    pub fn num_movies(&self) -> usize {
        self.contexts.len()
    }

    /// `K` of the user's rated movies, uniformly without replacement.
    pub fn movielens_round(&self, user: usize, rng: &mut ChaCha8Rng) -> Result<Round> {
        let u = self
            .users
            .get(user)
            .ok_or_else(|| Error::EmptyGroup(format!("no user at index {user}")))?;
        let k = self.arms_per_round;
        if u.ratings.len() < k {
            return Err(Error::EmptyGroup(format!(
                "user {} rated {} movies, fewer than K = {k}",
                u.user_id,
                u.ratings.len()
            )));
        }
        let picks = index::sample(rng, u.ratings.len(), k);
        let mut m = DMatrix::zeros(k, GENRES.len());
        let mut ids = Vec::with_capacity(k);
        let mut mean_rewards = Vec::with_capacity(k);
        for (row, idx) in picks.iter().enumerate() {
            let (movie, rating) = u.ratings[idx];
            m.row_mut(row).copy_from(&self.contexts[&movie].transpose());
            ids.push(movie as usize);
            mean_rewards.push(rating);
        }
        Ok(Round {
            arms: ArmSet::new(m, ids)?,
            mean_rewards,
            noise_std: 0.0,
        })
    }
}

/// `r ↦ (r − 1)/4`.
pub fn normalize_rating(r: f64) -> f64 {
    (r - 1.0) / 4.0
}

impl Environment for MovieLensEnv {
    /// Index into [`MovieLensEnv::users`].
    type Task = usize;

    fn dim(&self) -> usize {
        GENRES.len()
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "movielens": {
                "group": self.group.to_string(),
                "users": self.users.len(),
                "arms_per_round": self.arms_per_round,
            }
        })
    }

    /// A seeded shuffle of the eligible users, truncated to `num_tasks`.
    fn sample_tasks(&self, num_tasks: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if num_tasks > self.users.len() {
            return Err(Error::InvalidConfig(format!(
                "{num_tasks} tasks requested but only {} eligible users",
                self.users.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.users.len()).collect();
        order.shuffle(rng);
        order.truncate(num_tasks);
        Ok(order)
    }

    fn round(&self, task: &usize, rng: &mut ChaCha8Rng) -> Result<Round> {
        self.movielens_round(*task, rng)
    }
}

/// Writes a tiny ml-1m-format dataset; used by tests and examples.
#[doc(hidden)]
pub fn write_fixture(dir: &Path, users: u32, movies: u32, seed: u64) -> std::io::Result<PathBuf> {
    use rand::{Rng, SeedableRng};
    use std::io::Write;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(dir)?;
    let mut mf = std::fs::File::create(dir.join("movies.dat"))?;
    for m in 1..=movies {
        let n = rng.random_range(1..=4);
        let picks = index::sample(&mut rng, GENRES.len(), n);
        let g: Vec<&str> = picks.iter().map(|i| GENRES[i]).collect();
        // latin-1 byte in the title exercises the decoder
        mf.write_all(format!("{m}::Film {m} (199{})", m % 10).as_bytes())?;
        mf.write_all(&[b' ', 0xe9])?;
        writeln!(mf, "::{}", g.join("|"))?;
    }
    let mut uf = std::fs::File::create(dir.join("users.dat"))?;
    let mut rf = std::fs::File::create(dir.join("ratings.dat"))?;
    for u in 1..=users {
        let gender = if u % 2 == 0 { 'F' } else { 'M' };
        writeln!(uf, "{u}::{gender}::25::{}::12345", u % 21)?;
        let n = rng.random_range((movies / 2)..=movies) as usize;
        for m in index::sample(&mut rng, movies as usize, n).iter() {
            let r = rng.random_range(1..=5);
            writeln!(rf, "{u}::{}::{r}::97830{u}", m + 1)?;
        }
    }
    Ok(dir.to_path_buf())
}
