//! Shared domain types: items, queries, responses, and the on-disk catalog and
//! heldout-triplet formats.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of an item in its catalog (`0..N`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub usize);

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<usize> for ItemId {
    fn from(v: usize) -> Self {
        ItemId(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub id: ItemId,
    pub payload: String,
}

/// The item catalog. Ids are exactly `0..N` and `items[i].id == i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemCatalog {
    items: Vec<CatalogItem>,
}

impl ItemCatalog {
    /// Builds a catalog from items in any order; ids must cover `0..N` exactly once.
    pub fn new(mut items: Vec<CatalogItem>) -> Result<Self> {
        items.sort_by_key(|it| it.id);
        for (i, it) in items.iter().enumerate() {
            if it.id.0 != i {
                return Err(Error::Config(format!(
                    "catalog ids must be exactly 0..{} without duplicates (found {} at position {i})",
                    items.len(),
                    it.id
                )));
            }
        }
        Ok(Self { items })
    }

    /// A catalog whose payloads are the decimal ids, for synthetic datasets.
    pub fn synthetic(n_items: usize) -> Self {
        let items = (0..n_items)
            .map(|i| CatalogItem {
                id: ItemId(i),
                payload: i.to_string(),
            })
            .collect();
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[CatalogItem] {
        &self.items
    }

    pub fn payload(&self, id: ItemId) -> Option<&str> {
        self.items.get(id.0).map(|it| it.payload.as_str())
    }

    /// Reads a JSON-lines catalog: one `{"id": <int>, "payload": <string>}` per line.
    /// Blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut items = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let item: CatalogItem = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            items.push(item);
        }
        Self::new(items)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        for it in &self.items {
            serde_json::to_writer(&mut *w, it).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A head item plus a body of `k - 1` distinct items to be ranked against it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawQuery")]
pub struct TupleQuery {
    head: ItemId,
    body: Vec<ItemId>,
}

#[derive(Deserialize)]
struct RawQuery {
    head: ItemId,
    body: Vec<ItemId>,
}

impl TryFrom<RawQuery> for TupleQuery {
    type Error = Error;

    fn try_from(raw: RawQuery) -> Result<Self> {
        TupleQuery::new(raw.head, raw.body)
    }
}

impl TupleQuery {
    pub fn new(head: ItemId, body: Vec<ItemId>) -> Result<Self> {
        if body.len() < 2 {
            return Err(Error::domain(format!(
                "a tuple body needs at least 2 items, got {}",
                body.len()
            )));
        }
        let mut seen = HashSet::with_capacity(body.len() + 1);
        seen.insert(head);
        for &b in &body {
            if !seen.insert(b) {
                return Err(Error::domain(format!(
                    "item {b} repeats within query with head {head}"
                )));
            }
        }
        Ok(Self { head, body })
    }

    pub fn head(&self) -> ItemId {
        self.head
    }

    pub fn body(&self) -> &[ItemId] {
        &self.body
    }

    /// `k`: the head plus the body.
    pub fn tuple_size(&self) -> usize {
        self.body.len() + 1
    }

    /// Checks that every id is below `n_items`.
    pub fn check_bounds(&self, n_items: usize) -> Result<()> {
        match std::iter::once(&self.head)
            .chain(&self.body)
            .find(|id| id.0 >= n_items)
        {
            Some(id) => Err(Error::domain(format!(
                "item {id} out of range for a catalog of {n_items}"
            ))),
            None => Ok(()),
        }
    }

    /// Same query with the body in ascending id order.
    pub fn canonical(&self) -> TupleQuery {
        let mut body = self.body.clone();
        body.sort_unstable();
        TupleQuery {
            head: self.head,
            body,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    Simulated,
    Human,
}

/// An oracle's ranking of a query body, most similar to the head first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawResponse")]
pub struct RankingResponse {
    query: TupleQuery,
    ranking: Vec<ItemId>,
    /// Seconds since the Unix epoch. Simulated responses carry a logical clock
    /// (the query's index in the run) so that runs stay reproducible.
    pub timestamp: f64,
    pub source: ResponseSource,
}

#[derive(Deserialize)]
struct RawResponse {
    query: TupleQuery,
    ranking: Vec<ItemId>,
    timestamp: f64,
    source: ResponseSource,
}

impl TryFrom<RawResponse> for RankingResponse {
    type Error = Error;

    fn try_from(raw: RawResponse) -> Result<Self> {
        RankingResponse::new(raw.query, raw.ranking, raw.timestamp, raw.source)
    }
}

impl RankingResponse {
    pub fn new(
        query: TupleQuery,
        ranking: Vec<ItemId>,
        timestamp: f64,
        source: ResponseSource,
    ) -> Result<Self> {
        check_permutation(query.body(), &ranking)?;
        Ok(Self {
            query,
            ranking,
            timestamp,
            source,
        })
    }

    pub fn query(&self) -> &TupleQuery {
        &self.query
    }

    pub fn head(&self) -> ItemId {
        self.query.head
    }

    pub fn ranking(&self) -> &[ItemId] {
        &self.ranking
    }

    pub fn tuple_size(&self) -> usize {
        self.query.tuple_size()
    }

    /// The same response with the ranking order reversed.
    pub fn reversed(&self) -> RankingResponse {
        let mut out = self.clone();
        out.ranking.reverse();
        out
    }
}

/// Fails unless `ranking` holds exactly the items of `body`, each once.
pub fn check_permutation(body: &[ItemId], ranking: &[ItemId]) -> Result<()> {
    if ranking.len() != body.len() {
        return Err(Error::domain(format!(
            "ranking has {} items but the body has {}",
            ranking.len(),
            body.len()
        )));
    }
    let mut a = body.to_vec();
    let mut b = ranking.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(Error::domain(format!(
            "ranking {ranking:?} is not a permutation of body {body:?}"
        )));
    }
    Ok(())
}

/// Append-only history of responses, in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseLog {
    responses: Vec<RankingResponse>,
}

impl ResponseLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, response: RankingResponse) {
        self.responses.push(response);
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RankingResponse> {
        self.responses.iter()
    }

    pub fn as_slice(&self) -> &[RankingResponse] {
        &self.responses
    }

    /// All constituent triplets, response by response.
    pub fn triplets(&self) -> Vec<Triplet> {
        self.responses
            .iter()
            .flat_map(constituent_triplets)
            .collect()
    }

    /// Largest item index referenced, if any.
    pub fn max_item(&self) -> Option<ItemId> {
        self.responses
            .iter()
            .flat_map(|r| std::iter::once(r.head()).chain(r.ranking().iter().copied()))
            .max()
    }

    /// Writes one JSON record per line.
    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        for r in &self.responses {
            serde_json::to_writer(&mut *w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a ResponseLog {
    type Item = &'a RankingResponse;
    type IntoIter = std::slice::Iter<'a, RankingResponse>;

    fn into_iter(self) -> Self::IntoIter {
        self.responses.iter()
    }
}

impl FromIterator<RankingResponse> for ResponseLog {
    fn from_iter<I: IntoIterator<Item = RankingResponse>>(iter: I) -> Self {
        Self {
            responses: iter.into_iter().collect(),
        }
    }
}

/// "`head` is more similar to `closer` than to `farther`."
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: ItemId,
    pub closer: ItemId,
    pub farther: ItemId,
}

impl Triplet {
    pub fn new(head: ItemId, closer: ItemId, farther: ItemId) -> Result<Self> {
        if head == closer || head == farther || closer == farther {
            return Err(Error::domain(format!(
                "triplet ({head},{closer},{farther}) repeats an item"
            )));
        }
        Ok(Self {
            head,
            closer,
            farther,
        })
    }

    pub fn reversed(self) -> Self {
        Self {
            head: self.head,
            closer: self.farther,
            farther: self.closer,
        }
    }
}

/// Splits a ranking into its `k - 2` adjacent-pair triplets, in ranking order.
pub fn constituent_triplets(response: &RankingResponse) -> Vec<Triplet> {
    let head = response.head();
    response
        .ranking()
        .windows(2)
        .map(|w| Triplet {
            head,
            closer: w[0],
            farther: w[1],
        })
        .collect()
}

/// Reads a heldout triplet file: one `head,closer,farther` triple per line.
pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected `head,closer,farther`, got {} fields",
                fields.len()
            )));
        }
        let mut ids = [ItemId(0); 3];
        for (slot, f) in ids.iter_mut().zip(&fields) {
            *slot = ItemId(
                f.parse()
                    .map_err(|e| parse_err(format!("bad item id {f:?}: {e}")))?,
            );
        }
        out.push(Triplet::new(ids[0], ids[1], ids[2]).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_triplets(w: &mut impl Write, triplets: &[Triplet]) -> Result<()> {
    for t in triplets {
        writeln!(w, "{},{},{}", t.head, t.closer, t.farther)?;
    }
    Ok(())
}
