//! State → District → Sub-district/ULB hierarchy with synonyms.
//!
//! Loaded from CSV rows `state,district,subdistrict,ulb,synonyms` where
//! lower levels may be blank and synonyms are `|`-separated. Synonyms attach
//! to the deepest node named on the row. The third level holds the ULB when
//! one is given and the sub-district otherwise.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::{phrase_key, PhraseMatcher};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GazetteerError {
    #[error("gazetteer row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    State,
    District,
    Subdistrict,
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub level: Level,
    pub name: String,
    pub parent: Option<NodeId>,
    pub synonyms: Vec<String>,
}

/// A resolved position in the hierarchy; lower levels may be blank.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocationRef {
    pub state: String,
    pub district: String,
    pub subdistrict: String,
}

#[derive(Debug, Deserialize)]
struct Row {
    state: String,
    #[serde(default)]
    district: String,
    #[serde(default)]
    subdistrict: String,
    #[serde(default)]
    ulb: String,
    #[serde(default)]
    synonyms: String,
}

#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    nodes: Vec<Node>,
    /// Casefolded name or synonym to every node carrying it.
    index: HashMap<String, Vec<NodeId>>,
    children: HashMap<(Option<NodeId>, String), NodeId>,
    matcher: PhraseMatcher,
}

impl Gazetteer {
    pub fn from_csv(reader: impl Read) -> Result<Self, GazetteerError> {
        let mut g = Self::default();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| GazetteerError::Row {
                row: i + 1,
                msg: e.to_string(),
            })?;
            g.add_row(i + 1, &row)?;
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self, GazetteerError> {
        let file = std::fs::File::open(path).map_err(|e| GazetteerError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(file)
    }

    fn add_row(&mut self, row_no: usize, row: &Row) -> Result<(), GazetteerError> {
        let third = if row.ulb.is_empty() { &row.subdistrict } else { &row.ulb };
        let path = [
            (Level::State, row.state.as_str()),
            (Level::District, row.district.as_str()),
            (Level::Subdistrict, third.as_str()),
        ];
        if row.state.is_empty() {
            return Err(GazetteerError::Row {
                row: row_no,
                msg: "state is required".into(),
            });
        }
        if row.district.is_empty() && !third.is_empty() {
            return Err(GazetteerError::Row {
                row: row_no,
                msg: "sub-district without district".into(),
            });
        }
        let mut parent = None;
        for (level, name) in path {
            if name.is_empty() {
                break;
            }
            parent = Some(self.ensure(parent, level, name));
        }
        let deepest = parent.expect("state present");
        for syn in row.synonyms.split('|').map(str::trim).filter(|s| !s.is_empty()) {
            if !self.nodes[deepest].synonyms.iter().any(|s| s == syn) {
                self.nodes[deepest].synonyms.push(syn.to_string());
                self.index_surface(syn, deepest);
            }
        }
        Ok(())
    }

    fn ensure(&mut self, parent: Option<NodeId>, level: Level, name: &str) -> NodeId {
        let key = (parent, phrase_key(name));
        if let Some(&id) = self.children.get(&key) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            level,
            name: name.to_string(),
            parent,
            synonyms: Vec::new(),
        });
        self.children.insert(key, id);
        self.index_surface(name, id);
        id
    }

    fn index_surface(&mut self, surface: &str, id: NodeId) {
        let key = phrase_key(surface);
        if key.is_empty() {
            return;
        }
        let ids = self.index.entry(key).or_default();
        if !ids.contains(&id) {
            ids.push(id);
        }
        self.matcher.insert(surface);
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate()
    }

    /// Nodes whose name or synonym equals `surface` (case- and space-insensitive).
    pub fn lookup(&self, surface: &str) -> &[NodeId] {
        self.index.get(&phrase_key(surface)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn lookup_level(&self, surface: &str, level: Level) -> Vec<NodeId> {
        self.lookup(surface)
            .iter()
            .copied()
            .filter(|&id| self.nodes[id].level == level)
            .collect()
    }

    /// Surface keys of every gazetteer phrase found in `text`.
    pub fn spot(&self, text: &str) -> Vec<String> {
        self.matcher.find(text)
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    /// Whether `ancestor` is `id` or lies above it.
    pub fn is_within(&self, id: NodeId, ancestor: NodeId) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.nodes[c].parent;
        }
        false
    }

    /// The node and its ancestors as a [`LocationRef`].
    pub fn location_ref(&self, id: NodeId) -> LocationRef {
        let mut out = LocationRef::default();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let n = &self.nodes[c];
            match n.level {
                Level::State => out.state = n.name.clone(),
                Level::District => out.district = n.name.clone(),
                Level::Subdistrict => out.subdistrict = n.name.clone(),
            }
            cur = n.parent;
        }
        out
    }

    /// Child of `parent` named `name` (or carrying it as a synonym).
    pub fn child_named(&self, parent: NodeId, name: &str) -> Option<NodeId> {
        self.lookup(name).iter().copied().find(|&id| self.nodes[id].parent == Some(parent))
    }

    pub fn state_named(&self, name: &str) -> Option<NodeId> {
        self.lookup_level(name, Level::State).into_iter().next()
    }

    /// True when the (state, district, subdistrict) triple exists, blanks allowed below.
    pub fn contains(&self, loc: &LocationRef) -> bool {
        if loc.state.is_empty() {
            return loc.district.is_empty() && loc.subdistrict.is_empty();
        }
        let Some(state) = self.children.get(&(None, phrase_key(&loc.state))).copied() else {
            return false;
        };
        if loc.district.is_empty() {
            return loc.subdistrict.is_empty();
        }
        let Some(district) = self.children.get(&(Some(state), phrase_key(&loc.district))).copied() else {
            return false;
        };
        loc.subdistrict.is_empty() || self.children.contains_key(&(Some(district), phrase_key(&loc.subdistrict)))
    }

    pub fn state_names(&self) -> BTreeSet<&str> {
        self.nodes
            .iter()
            .filter(|n| n.level == Level::State)
            .map(|n| n.name.as_str())
            .collect()
    }
}
