use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// A user-item pair of dense indices.
pub type Edge = (u32, u32);

/// The binary interaction matrix stored as its sorted support.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    num_users: usize,
    num_items: usize,
    edges: Vec<Edge>,
}

impl InteractionSet {
    /// Builds a set from arbitrary pairs; duplicates collapse.
    pub fn new(num_users: usize, num_items: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut edges: Vec<Edge> = edges.into_iter().collect();
        if let Some(&(u, i)) = edges
            .iter()
            .find(|&&(u, i)| u as usize >= num_users || i as usize >= num_items)
        {
            return Err(Error::invalid(format!(
                "edge ({u}, {i}) out of range for {num_users} users x {num_items} items"
            )));
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self {
            num_users,
            num_items,
            edges,
        })
    }

    pub fn empty(num_users: usize, num_items: usize) -> Self {
        Self {
            num_users,
            num_items,
            edges: Vec::new(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Edges in ascending `(user, item)` order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.edges.binary_search(&(user, item)).is_ok()
    }

    /// Sorted item lists per user.
    pub fn items_by_user(&self) -> Vec<Vec<u32>> {
        let mut lists = vec![Vec::new(); self.num_users];
        for &(u, i) in &self.edges {
            lists[u as usize].push(i);
        }
        lists
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_users];
        for &(u, _) in &self.edges {
            deg[u as usize] += 1;
        }
        deg
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_items];
        for &(_, i) in &self.edges {
            deg[i as usize] += 1;
        }
        deg
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.num_users != other.num_users || self.num_items != other.num_items {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.num_users, self.num_items, other.num_users, other.num_items
            )));
        }
        Ok(())
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Self::new(
            self.num_users,
            self.num_items,
            self.edges.iter().chain(other.edges.iter()).copied(),
        )
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            num_users: self.num_users,
            num_items: self.num_items,
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|&(u, i)| !other.contains(u, i))
                .collect(),
        })
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.edges.iter().all(|&(u, i)| other.contains(u, i))
    }

    pub fn is_disjoint_from(&self, other: &Self) -> bool {
        self.edges.iter().all(|&(u, i)| !other.contains(u, i))
    }

    /// Writes `user<TAB>item` index lines.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for &(u, i) in &self.edges {
            writeln!(out, "{u}\t{i}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path, num_users: usize, num_items: usize) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let mut cols = line.split('\t');
            let mut next_index = || -> Result<u32> {
                let raw = cols.next().ok_or_else(|| parse_err("expected two columns".into()))?;
                raw.trim()
                    .parse()
                    .map_err(|e| parse_err(format!("bad index {raw:?}: {e}")))
            };
            let u = next_index()?;
            let i = next_index()?;
            edges.push((u, i));
        }
        Self::new(num_users, num_items, edges)
    }
}

/// Result of ingesting a raw interaction file.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub interactions: InteractionSet,
    /// Raw user id for each dense user index.
    pub user_ids: Vec<String>,
    /// Raw item id for each dense item index.
    pub item_ids: Vec<String>,
}

impl Ingested {
    /// Writes `<stem>.users.tsv` and `<stem>.items.tsv` (`raw_id<TAB>index`).
    pub fn write_mappings(&self, dir: &Path, stem: &str) -> Result<()> {
        for (suffix, ids) in [("users", &self.user_ids), ("items", &self.item_ids)] {
            let path = dir.join(format!("{stem}.{suffix}.tsv"));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            for (index, raw) in ids.iter().enumerate() {
                writeln!(out, "{raw}\t{index}").map_err(|e| Error::io(&path, e))?;
            }
            out.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Reads `raw_user<TAB>raw_item` lines, applies iterative k-core filtering and
/// assigns dense indices in first-appearance order of the surviving ids.
pub fn ingest_interactions(path: &Path, min_core: usize) -> Result<Ingested> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw_pairs: Vec<(String, String)> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(u), Some(i)) if !u.is_empty() && !i.is_empty() => {
                raw_pairs.push((u.trim().to_owned(), i.trim().to_owned()))
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: "expected raw_user<TAB>raw_item".into(),
                })
            }
        }
    }
    core_pairs(&raw_pairs, min_core)
}

/// In-memory form of [`ingest_interactions`].
pub fn core_pairs(raw_pairs: &[(String, String)], min_core: usize) -> Result<Ingested> {
    // Provisional ids in first-appearance order over the whole file.
    let mut user_lookup: HashMap<&str, usize> = HashMap::new();
    let mut item_lookup: HashMap<&str, usize> = HashMap::new();
    let mut users: Vec<&str> = Vec::new();
    let mut items: Vec<&str> = Vec::new();
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(raw_pairs.len());
    for (u, i) in raw_pairs {
        let uid = *user_lookup.entry(u.as_str()).or_insert_with(|| {
            users.push(u.as_str());
            users.len() - 1
        });
        let iid = *item_lookup.entry(i.as_str()).or_insert_with(|| {
            items.push(i.as_str());
            items.len() - 1
        });
        pairs.push((uid, iid));
    }
    pairs.sort_unstable();
    pairs.dedup();

    let mut alive = vec![true; pairs.len()];
    let mut pass = 0usize;
    loop {
        pass += 1;
        let mut changed = false;
        for side in [Side::User, Side::Item] {
            let width = match side {
                Side::User => users.len(),
                Side::Item => items.len(),
            };
            let mut degree = vec![0usize; width];
            for (k, &(u, i)) in pairs.iter().enumerate() {
                if alive[k] {
                    degree[side.pick(u, i)] += 1;
                }
            }
            for (k, &(u, i)) in pairs.iter().enumerate() {
                if alive[k] && degree[side.pick(u, i)] < min_core {
                    alive[k] = false;
                    changed = true;
                }
            }
            if !alive.iter().any(|&a| a) {
                return Err(Error::EmptyAfterCoring {
                    pass: format!("pass {pass} ({} filter)", side.name()),
                    min_core,
                });
            }
        }
        if !changed {
            break;
        }
    }

    // Surviving ids keep their provisional (first-appearance) order.
    let mut has_user = vec![false; users.len()];
    let mut has_item = vec![false; items.len()];
    for (&(u, i), _) in pairs.iter().zip(&alive).filter(|(_, &a)| a) {
        has_user[u] = true;
        has_item[i] = true;
    }
    let dense = |keep: &[bool]| {
        let mut next = 0usize;
        keep.iter()
            .map(|&k| {
                let idx = next;
                next += usize::from(k);
                if k { idx } else { usize::MAX }
            })
            .collect::<Vec<_>>()
    };
    let (user_index, item_index) = (dense(&has_user), dense(&has_item));
    let pick = |ids: &[&str], keep: &[bool]| -> Vec<String> {
        ids.iter().zip(keep).filter(|(_, &k)| k).map(|(s, _)| s.to_string()).collect()
    };
    let (user_ids, item_ids) = (pick(&users, &has_user), pick(&items, &has_item));
    let edges: Vec<Edge> = pairs
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(&(u, i), _)| (user_index[u] as u32, item_index[i] as u32))
        .collect();
    let interactions = InteractionSet::new(user_ids.len(), item_ids.len(), edges)?;
    Ok(Ingested {
        interactions,
        user_ids,
        item_ids,
    })
}

#[derive(Clone, Copy)]
enum Side {
    User,
    Item,
}

impl Side {
    fn pick(self, u: usize, i: usize) -> usize {
        match self {
            Side::User => u,
            Side::Item => i,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

/// Train/validation/test partition plus the frozen training positives used
/// as the evaluation filter.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: InteractionSet,
    pub val: InteractionSet,
    pub test: InteractionSet,
    original_train_positives: InteractionSet,
}

/// Fractions assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitDataset {
    pub fn from_parts(train: InteractionSet, val: InteractionSet, test: InteractionSet) -> Result<Self> {
        train.same_shape(&val)?;
        train.same_shape(&test)?;
        if !train.is_disjoint_from(&val) || !train.is_disjoint_from(&test) || !val.is_disjoint_from(&test) {
            return Err(Error::invalid("train, validation and test must be pairwise disjoint"));
        }
        let original_train_positives = train.clone();
        Ok(Self {
            train,
            val,
            test,
            original_train_positives,
        })
    }

    /// Training edges as they were when this dataset was constructed.
    pub fn original_train_positives(&self) -> &InteractionSet {
        &self.original_train_positives
    }

    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    /// Validation and test edges together.
    pub fn holdout(&self) -> InteractionSet {
        self.val.union(&self.test).expect("split parts share a shape")
    }

    /// A dataset whose observed training set is `train` (e.g. after noise
    /// injection). The new training set becomes the frozen filter set. Added
    /// noise may overlap the holdout, so disjointness is not re-checked.
    pub fn with_observed_train(&self, train: InteractionSet) -> Result<Self> {
        self.train.same_shape(&train)?;
        Ok(Self {
            original_train_positives: train.clone(),
            train,
            val: self.val.clone(),
            test: self.test.clone(),
        })
    }

    /// Writes `dims.txt`, `train.tsv`, `val.tsv`, `test.tsv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let dims = dir.join("dims.txt");
        fs::write(&dims, format!("{} {}\n", self.num_users(), self.num_items())).map_err(|e| Error::io(&dims, e))?;
        self.train.write_tsv(&dir.join("train.tsv"))?;
        self.val.write_tsv(&dir.join("val.tsv"))?;
        self.test.write_tsv(&dir.join("test.tsv"))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let dims_path = dir.join("dims.txt");
        let dims = fs::read_to_string(&dims_path).map_err(|e| Error::io(&dims_path, e))?;
        let parsed: Vec<usize> = dims
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: dims_path.clone(),
                line: 1,
                message: e.to_string(),
            })?;
        let [m, n] = parsed[..] else {
            return Err(Error::Parse {
                path: dims_path,
                line: 1,
                message: "expected `<users> <items>`".into(),
            });
        };
        let train = InteractionSet::read_tsv(&dir.join("train.tsv"), m, n)?;
        let val = InteractionSet::read_tsv(&dir.join("val.tsv"), m, n)?;
        let test = InteractionSet::read_tsv(&dir.join("test.tsv"), m, n)?;
        // Noise-corrupted training sets may overlap the holdout.
        Ok(Self {
            original_train_positives: train.clone(),
            train,
            val,
            test,
        })
    }
}

/// Per-user random split. Users with fewer than three interactions keep all
/// of them in train; otherwise validation and test take `floor(ratio * n)`
/// and train takes the remainder.
pub fn split_dataset(inter: &InteractionSet, ratios: SplitRatios, seed: u64) -> Result<SplitDataset> {
    let total = ratios.train + ratios.val + ratios.test;
    if (total - 1.0).abs() > 1e-9 || ratios.train < 0.0 || ratios.val < 0.0 || ratios.test < 0.0 {
        return Err(Error::invalid(format!("split ratios must be nonnegative and sum to 1, got {total}")));
    }
    let mut rng = SplitMix64::derive(seed, "split");
    let (m, n) = (inter.num_users(), inter.num_items());
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (user, mut items) in inter.items_by_user().into_iter().enumerate() {
        let u = user as u32;
        let count = items.len();
        if count < 3 {
            train.extend(items.into_iter().map(|i| (u, i)));
            continue;
        }
        rng.shuffle(&mut items);
        let n_val = (ratios.val * count as f64 + 1e-9).floor() as usize;
        let n_test = (ratios.test * count as f64 + 1e-9).floor() as usize;
        let n_train = count - n_val - n_test;
        train.extend(items[..n_train].iter().map(|&i| (u, i)));
        val.extend(items[n_train..n_train + n_val].iter().map(|&i| (u, i)));
        test.extend(items[n_train + n_val..].iter().map(|&i| (u, i)));
    }
    SplitDataset::from_parts(
        InteractionSet::new(m, n, train)?,
        InteractionSet::new(m, n, val)?,
        InteractionSet::new(m, n, test)?,
    )
}
