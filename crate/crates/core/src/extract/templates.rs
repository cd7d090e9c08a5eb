//! Question and hypothesis templates with `DISEASE` / `LOCATION` slots.
//!
//! Template files are plain text with `[category]` section headers and one
//! template per line.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{Incident, IncidentType};

pub const QUESTIONS: &str = include_str!("../../assets/templates/questions.txt");
pub const HYPOTHESES: &str = include_str!("../../assets/templates/hypotheses.txt");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionCategory {
    NewCases,
    NewDeaths,
    TotalCases,
    TotalDeaths,
}

impl QuestionCategory {
    pub const ALL: [QuestionCategory; 4] = [
        QuestionCategory::NewCases,
        QuestionCategory::NewDeaths,
        QuestionCategory::TotalCases,
        QuestionCategory::TotalDeaths,
    ];

    pub fn incident(self) -> Incident {
        match self {
            QuestionCategory::NewCases | QuestionCategory::TotalCases => Incident::Case,
            QuestionCategory::NewDeaths | QuestionCategory::TotalDeaths => Incident::Death,
        }
    }

    pub fn incident_type(self) -> IncidentType {
        match self {
            QuestionCategory::NewCases | QuestionCategory::NewDeaths => IncidentType::New,
            QuestionCategory::TotalCases | QuestionCategory::TotalDeaths => IncidentType::Total,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionCategory::NewCases => "new_cases",
            QuestionCategory::NewDeaths => "new_deaths",
            QuestionCategory::TotalCases => "total_cases",
            QuestionCategory::TotalDeaths => "total_deaths",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisCategory {
    Cases,
    Deaths,
}

impl HypothesisCategory {
    pub const ALL: [HypothesisCategory; 2] = [HypothesisCategory::Cases, HypothesisCategory::Deaths];

    pub fn incident(self) -> Incident {
        match self {
            HypothesisCategory::Cases => Incident::Case,
            HypothesisCategory::Deaths => Incident::Death,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HypothesisCategory::Cases => "cases",
            HypothesisCategory::Deaths => "deaths",
        }
    }
}

macro_rules! category_str {
    ($t:ty) => {
        impl FromStr for $t {
            type Err = TemplateError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$t>::ALL
                    .into_iter()
                    .find(|c| c.as_str() == s)
                    .ok_or_else(|| TemplateError::UnknownCategory(s.to_string()))
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

category_str!(QuestionCategory);
category_str!(HypothesisCategory);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Disease,
    Location,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Lit(String),
    Slot(Slot),
}

/// A single template split into literal text and slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub source: String,
    pieces: Vec<Piece>,
}

fn slot_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(DISEASE|LOCATION)\b").unwrap())
}

impl Template {
    pub fn parse(source: &str) -> Option<Self> {
        let mut pieces = Vec::new();
        let mut last = 0;
        for m in slot_re().find_iter(source) {
            if m.start() > last {
                pieces.push(Piece::Lit(source[last..m.start()].to_string()));
            }
            pieces.push(Piece::Slot(if m.as_str() == "DISEASE" {
                Slot::Disease
            } else {
                Slot::Location
            }));
            last = m.end();
        }
        if last < source.len() {
            pieces.push(Piece::Lit(source[last..].to_string()));
        }
        let count = |s: Slot| pieces.iter().filter(|p| **p == Piece::Slot(s)).count();
        // adjacent slots would make the rendering ambiguous
        let adjacent = pieces
            .windows(2)
            .any(|w| matches!((&w[0], &w[1]), (Piece::Slot(_), Piece::Slot(_))));
        (count(Slot::Disease) == 1 && count(Slot::Location) == 1 && !adjacent).then(|| Self {
            source: source.to_string(),
            pieces,
        })
    }

    /// Substitutes both slots verbatim.
    pub fn render(&self, disease: &str, location: &str) -> String {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Lit(s) => s.as_str(),
                Piece::Slot(Slot::Disease) => disease,
                Piece::Slot(Slot::Location) => location,
            })
            .collect()
    }

    /// Recovers `(disease, location)` from a rendering of this template.
    ///
    /// Each slot extends to the first occurrence of the literal that follows
    /// it, so values that contain that literal are not recoverable.
    pub fn match_slots(&self, rendered: &str) -> Option<(String, String)> {
        let mut rest = rendered;
        let mut disease = None;
        let mut location = None;
        let mut i = 0;
        while i < self.pieces.len() {
            match &self.pieces[i] {
                Piece::Lit(s) => rest = rest.strip_prefix(s.as_str())?,
                Piece::Slot(slot) => {
                    let value = match self.pieces.get(i + 1) {
                        Some(Piece::Lit(next)) => {
                            let end = rest.find(next.as_str())?;
                            let v = &rest[..end];
                            rest = &rest[end..];
                            v
                        }
                        _ => std::mem::take(&mut rest),
                    };
                    if value.is_empty() {
                        return None;
                    }
                    match slot {
                        Slot::Disease => disease = Some(value.to_string()),
                        Slot::Location => location = Some(value.to_string()),
                    }
                }
            }
            i += 1;
        }
        rest.is_empty().then_some(())?;
        Some((disease?, location?))
    }
}

/// Ordered templates per category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet<C> {
    pub sections: Vec<(C, Vec<Template>)>,
}

pub type QuestionTemplateSet = TemplateSet<QuestionCategory>;
pub type HypothesisTemplateSet = TemplateSet<HypothesisCategory>;

impl<C: FromStr<Err = TemplateError> + PartialEq + Copy> TemplateSet<C> {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut sections: Vec<(C, Vec<Template>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let cat: C = name.trim().parse()?;
                if sections.iter().any(|(c, _)| *c == cat) {
                    return Err(TemplateError::Syntax {
                        line: i + 1,
                        msg: format!("duplicate section [{name}]"),
                    });
                }
                sections.push((cat, Vec::new()));
                continue;
            }
            let Some((_, templates)) = sections.last_mut() else {
                return Err(TemplateError::Syntax {
                    line: i + 1,
                    msg: "template before any [category] header".into(),
                });
            };
            let t = Template::parse(line).ok_or_else(|| TemplateError::Syntax {
                line: i + 1,
                msg: "template needs exactly one DISEASE and one LOCATION slot".into(),
            })?;
            templates.push(t);
        }
        Ok(Self { sections })
    }

    pub fn len(&self) -> usize {
        self.sections.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, category: C) -> usize {
        self.sections
            .iter()
            .find(|(c, _)| *c == category)
            .map(|(_, t)| t.len())
            .unwrap_or(0)
    }

    /// Renders every template in file order.
    pub fn generate(&self, disease: &str, location: &str) -> Vec<(C, String)> {
        self.sections
            .iter()
            .flat_map(|(c, ts)| ts.iter().map(move |t| (*c, t.render(disease, location))))
            .collect()
    }

    /// Finds the template a rendered string came from, with its slot values.
    pub fn recover(&self, rendered: &str) -> Option<(C, String, String)> {
        self.sections.iter().find_map(|(c, ts)| {
            ts.iter()
                .find_map(|t| t.match_slots(rendered))
                .map(|(d, l)| (*c, d, l))
        })
    }
}

impl QuestionTemplateSet {
    pub fn bundled() -> Self {
        Self::parse(QUESTIONS).expect("bundled question templates parse")
    }
}

impl HypothesisTemplateSet {
    pub fn bundled() -> Self {
        Self::parse(HYPOTHESES).expect("bundled hypothesis templates parse")
    }
}

pub fn generate_questions(disease: &str, location: &str, templates: &QuestionTemplateSet) -> Vec<(QuestionCategory, String)> {
    templates.generate(disease, location)
}

pub fn generate_hypotheses(
    disease: &str,
    location: &str,
    templates: &HypothesisTemplateSet,
) -> Vec<(HypothesisCategory, String)> {
    templates.generate(disease, location)
}
