//! Per-facet precision/recall/F1 with multiset matching.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::render::{normalize_hex_color, ElementTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Text,
    Type,
    Color,
    Layout,
}

impl Facet {
    pub const ALL: [Facet; 4] = [Facet::Text, Facet::Type, Facet::Color, Facet::Layout];

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Text => "text",
            Facet::Type => "type",
            Facet::Color => "color",
            Facet::Layout => "layout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown facet {0:?} (expected text, type, color or layout)")]
pub struct UnknownFacet(pub String);

impl std::str::FromStr for Facet {
    type Err = UnknownFacet;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Facet::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| UnknownFacet(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacetF1 {
    pub facet: Facet,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_count: usize,
    pub gen_count: usize,
    pub matched: usize,
}

impl FacetF1 {
    pub fn from_counts(facet: Facet, gold_count: usize, gen_count: usize, matched: usize) -> Self {
        let ratio = |num: usize, den: usize| match (den, gold_count == 0 && gen_count == 0) {
            (_, true) => 1.0,
            (0, false) => 0.0,
            _ => num as f64 / den as f64,
        };
        let precision = ratio(matched, gen_count);
        let recall = ratio(matched, gold_count);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        FacetF1 {
            facet,
            precision,
            recall,
            f1,
            gold_count,
            gen_count,
            matched,
        }
    }

    /// Score for a facet whose generated side does not exist (failed render).
    pub fn missing(facet: Facet, gold_count: usize) -> Self {
        FacetF1 {
            facet,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            gold_count,
            gen_count: 0,
            matched: 0,
        }
    }
}

/// Σ_e min(count_a(e), count_b(e)).
pub fn multiset_matched<T: Hash + Eq>(a: &[T], b: &[T]) -> usize {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for x in a {
        *counts.entry(x).or_default() += 1;
    }
    let mut matched = 0;
    for x in b {
        if let Some(c) = counts.get_mut(x) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    matched
}

/// Trim, case-fold, collapse internal whitespace.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Deserialize)]
struct VocabularyFile {
    canonical: Vec<String>,
    fallback: String,
}

/// Canonical chart-type names shared with the tracer.
#[derive(Debug, Clone)]
pub struct TypeVocabulary {
    canonical: Vec<String>,
    fallback: String,
}

impl TypeVocabulary {
    pub fn builtin() -> &'static TypeVocabulary {
        static VOCAB: OnceLock<TypeVocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| {
            Self::from_json(include_str!("../../assets/chart_types.json")).expect("bundled vocabulary parses")
        })
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let f: VocabularyFile = serde_json::from_str(json)?;
        Ok(TypeVocabulary {
            canonical: f.canonical,
            fallback: f.fallback,
        })
    }

    pub fn canonical(&self) -> &[String] {
        &self.canonical
    }

    pub fn canonicalize(&self, raw: &str) -> String {
        let t = raw.trim().to_lowercase();
        if self.canonical.contains(&t) {
            t
        } else {
            self.fallback.clone()
        }
    }
}

/// The facet's elements after normalization, as comparable keys.
fn facet_elements(trace: &ElementTrace, facet: Facet, vocab: &TypeVocabulary) -> Vec<String> {
    match facet {
        Facet::Text => trace
            .texts
            .iter()
            .map(|t| normalize_text(t))
            .filter(|t| !t.is_empty())
            .collect(),
        Facet::Type => trace.chart_types.iter().map(|t| vocab.canonicalize(t)).collect(),
        Facet::Color => trace
            .colors
            .iter()
            .map(|c| normalize_hex_color(c).unwrap_or_else(|| c.trim().to_lowercase()))
            .collect(),
        Facet::Layout => trace.layout.iter().map(|[r, c, i]| format!("{r},{c},{i}")).collect(),
    }
}

pub fn facet_f1(gold: &ElementTrace, gen: &ElementTrace, facet: Facet) -> FacetF1 {
    facet_f1_with(gold, gen, facet, TypeVocabulary::builtin())
}

pub fn facet_f1_with(gold: &ElementTrace, gen: &ElementTrace, facet: Facet, vocab: &TypeVocabulary) -> FacetF1 {
    let g = facet_elements(gold, facet, vocab);
    let p = facet_elements(gen, facet, vocab);
    FacetF1::from_counts(facet, g.len(), p.len(), multiset_matched(&g, &p))
}

pub fn facet_count(trace: &ElementTrace, facet: Facet) -> usize {
    facet_elements(trace, facet, TypeVocabulary::builtin()).len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(v: &[&str]) -> ElementTrace {
        ElementTrace {
            texts: v.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn hand_case_two_thirds() {
        let f = facet_f1(&texts(&["A", "B", "C"]), &texts(&["A", "B", "D"]), Facet::Text);
        assert!((f.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((f.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((f.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn multiset_colors() {
        let gold = ElementTrace {
            colors: vec!["#ff0000".into(), "#FF0000".into()],
            ..Default::default()
        };
        let gen = ElementTrace {
            colors: vec!["#f00".into()],
            ..Default::default()
        };
        let f = facet_f1(&gold, &gen, Facet::Color);
        assert_eq!((f.matched, f.precision, f.recall), (1, 1.0, 0.5));
        assert!((f.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sides() {
        let e = ElementTrace::default();
        assert_eq!(facet_f1(&e, &e, Facet::Layout).f1, 1.0);
        assert_eq!(facet_f1(&texts(&["a"]), &e, Facet::Text).f1, 0.0);
        assert_eq!(facet_f1(&e, &texts(&["a"]), Facet::Text).f1, 0.0);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("  Sales   by\tQuarter "), "sales by quarter");
        let f = facet_f1(&texts(&["Sales  Q1"]), &texts(&["sales q1 "]), Facet::Text);
        assert_eq!(f.f1, 1.0);
        let v = TypeVocabulary::builtin();
        assert_eq!(v.canonicalize(" Bar"), "bar");
        assert_eq!(v.canonicalize("sankey"), "other");
        assert_eq!(v.canonical().len(), 20);
    }

    #[test]
    fn facet_parse() {
        assert_eq!("color".parse::<Facet>(), Ok(Facet::Color));
        assert!("size".parse::<Facet>().is_err());
    }

    fn small_trace() -> impl Strategy<Value = ElementTrace> {
        let t = prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "A "]), 0..8);
        let ty = prop::collection::vec(prop::sample::select(vec!["bar", "line", "pie", "odd"]), 0..8);
        let co = prop::collection::vec(prop::sample::select(vec!["#ff0000", "#00ff00", "#F00"]), 0..8);
        let la = prop::collection::vec((1u32..3, 1u32..3, 1u32..3), 0..8);
        (t, ty, co, la).prop_map(|(t, ty, co, la)| ElementTrace {
            texts: t.into_iter().map(String::from).collect(),
            chart_types: ty.into_iter().map(String::from).collect(),
            colors: co.into_iter().map(String::from).collect(),
            layout: la.into_iter().map(|(r, c, i)| [r, c, i]).collect(),
        })
    }

    proptest! {
        #[test]
        fn swapping_roles_swaps_p_and_r(gold in small_trace(), gen in small_trace(), k in 0usize..4) {
            let facet = Facet::ALL[k];
            let a = facet_f1(&gold, &gen, facet);
            let b = facet_f1(&gen, &gold, facet);
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            prop_assert!((a.f1 - b.f1).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&a.f1));
            prop_assert!(a.matched <= a.gold_count.min(a.gen_count));
        }

        #[test]
        fn self_match_is_one(t in small_trace(), k in 0usize..4) {
            prop_assert_eq!(facet_f1(&t, &t, Facet::ALL[k]).f1, 1.0);
        }
    }
}
