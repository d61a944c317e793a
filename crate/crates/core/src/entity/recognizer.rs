use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use super::{EntityCandidate, KbId, Language, LinkError, TextSpan};

/// Finds entity mentions in text.
pub trait SpanRecognizer: Send + Sync {
    /// Returns mention spans. Implementations may return spans in any order;
    /// [`recognize_spans`] normalizes them.
    fn recognize(&self, text: &str, language: Language) -> Result<Vec<TextSpan>, LinkError>;
}

/// Proposes ranked knowledge-base candidates for mentions in a text.
pub trait CandidateSource: Send + Sync {
    fn candidates(&self, text: &str, language: Language) -> Result<Vec<EntityCandidate>, LinkError>;
}

/// Validates the input, runs `recognizer` and returns its spans sorted by
/// start offset with overlapping spans removed (the earlier, then longer,
/// span wins).
pub fn recognize_spans(
    recognizer: &dyn SpanRecognizer,
    text: &str,
    language: &str,
) -> Result<Vec<TextSpan>, LinkError> {
    let language: Language = language.parse()?;
    if text.trim().is_empty() {
        return Err(LinkError::EmptyText);
    }
    let spans = recognizer.recognize(text, language)?;
    Ok(normalize_spans(text, spans))
}

pub(crate) fn normalize_spans(text: &str, mut spans: Vec<TextSpan>) -> Vec<TextSpan> {
    spans.retain(|s| s.is_valid_in(text));
    spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut out: Vec<TextSpan> = Vec::with_capacity(spans.len());
    for span in spans {
        if out.last().is_none_or(|last| !last.overlaps(&span)) {
            out.push(span);
        }
    }
    out
}

/// Dictionary recognizer: leftmost-longest, case-sensitive matching of known
/// surface forms on word boundaries.
///
/// Loaded from a TSV file of `surface<TAB>kb_id` lines. A surface may appear
/// on several lines to model an ambiguous mention; as a [`CandidateSource`]
/// each listed id becomes a candidate with pagerank 1.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    /// Surface (as chars) to candidate ids, longest surfaces first.
    entries: Vec<(Vec<char>, Vec<KbId>)>,
}

impl Gazetteer {
    pub fn new<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, KbId)>,
        S: Into<String>,
    {
        let mut by_surface: BTreeMap<String, Vec<KbId>> = BTreeMap::new();
        for (surface, id) in pairs {
            let ids = by_surface.entry(surface.into()).or_default();
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let mut entries: Vec<(Vec<char>, Vec<KbId>)> = by_surface
            .into_iter()
            .filter(|(s, _)| !s.is_empty())
            .map(|(s, ids)| (s.chars().collect(), ids))
            .collect();
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Gazetteer { entries }
    }

    pub fn from_tsv(reader: impl BufRead, source: &str) -> Result<Self, LinkError> {
        let mut pairs = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| LinkError::Io { path: source.to_string(), source: e })?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| LinkError::Parse { path: source.to_string(), line: n + 1, message };
            let (surface, id) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected surface<TAB>kb_id".into()))?;
            if surface.is_empty() {
                return Err(parse_err("empty surface".into()));
            }
            let id = KbId::new(id.trim()).map_err(|e| parse_err(e.to_string()))?;
            pairs.push((surface.to_string(), id));
        }
        Ok(Gazetteer::new(pairs))
    }

    pub fn load(path: &Path) -> Result<Self, LinkError> {
        let file = std::fs::File::open(path)
            .map_err(|e| LinkError::Io { path: path.display().to_string(), source: e })?;
        Gazetteer::from_tsv(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn scan(&self, text: &str) -> Vec<(TextSpan, &[KbId])> {
        let chars: Vec<char> = text.chars().collect();
        let boundary = |i: usize| i == 0 || i >= chars.len() || !chars[i - 1].is_alphanumeric() || !chars[i].is_alphanumeric();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let hit = if boundary(i) {
                self.entries.iter().find(|(surface, _)| {
                    let end = i + surface.len();
                    end <= chars.len() && chars[i..end] == surface[..] && boundary(end)
                })
            } else {
                None
            };
            match hit {
                Some((surface, ids)) => {
                    let end = i + surface.len();
                    out.push((
                        TextSpan { start: i, end, surface: chars[i..end].iter().collect() },
                        ids.as_slice(),
                    ));
                    i = end;
                }
                None => i += 1,
            }
        }
        out
    }
}

impl SpanRecognizer for Gazetteer {
    fn recognize(&self, text: &str, _language: Language) -> Result<Vec<TextSpan>, LinkError> {
        Ok(self.scan(text).into_iter().map(|(span, _)| span).collect())
    }
}

impl CandidateSource for Gazetteer {
    fn candidates(&self, text: &str, _language: Language) -> Result<Vec<EntityCandidate>, LinkError> {
        Ok(self
            .scan(text)
            .into_iter()
            .flat_map(|(span, ids)| {
                ids.iter().map(move |id| EntityCandidate { kb_id: id.clone(), pagerank: 1.0, span: span.clone() })
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> KbId {
        KbId::new(s).unwrap()
    }

    fn gaz(pairs: &[(&str, &str)]) -> Gazetteer {
        Gazetteer::new(pairs.iter().map(|(s, i)| (s.to_string(), id(i))))
    }

    fn starts_ends(spans: &[TextSpan]) -> Vec<(usize, usize)> {
        spans.iter().map(|s| (s.start, s.end)).collect()
    }

    #[test]
    fn empty_text_rejected() {
        let g = gaz(&[("Obama", "Q76")]);
        assert!(matches!(recognize_spans(&g, "", "en"), Err(LinkError::EmptyText)));
    }

    #[test]
    fn unsupported_language_rejected() {
        let g = gaz(&[("Obama", "Q76")]);
        assert!(matches!(recognize_spans(&g, "Obama", "fr"), Err(LinkError::UnsupportedLanguage(_))));
        assert!(recognize_spans(&g, "Obama", "de").is_ok());
    }

    #[test]
    fn gazetteer_example() {
        let g = gaz(&[("Obama", "Q76"), ("Berlin", "Q64")]);
        let spans = recognize_spans(&g, "Obama visited Berlin.", "en").unwrap();
        assert_eq!(starts_ends(&spans), vec![(0, 5), (14, 20)]);
        assert_eq!(spans[1].surface, "Berlin");
    }

    /// Scanning oracle: every occurrence of every surface on word
    /// boundaries, found by brute-force substring search.
    fn oracle(text: &str, surfaces: &[&str]) -> Vec<(usize, usize)> {
        let chars: Vec<char> = text.chars().collect();
        let mut found = Vec::new();
        for s in surfaces {
            let sc: Vec<char> = s.chars().collect();
            for start in 0..chars.len() {
                let end = start + sc.len();
                if end > chars.len() || chars[start..end] != sc[..] {
                    continue;
                }
                let left = start == 0 || !chars[start - 1].is_alphanumeric();
                let right = end == chars.len() || !chars[end].is_alphanumeric();
                if left && right {
                    found.push((start, end));
                }
            }
        }
        found.sort();
        found
    }

    #[test]
    fn repeated_name_reported_twice() {
        let text = "Merkel met Macron. Later, Merkel left Paris.";
        let g = gaz(&[("Merkel", "Q567"), ("Macron", "Q3052772"), ("Paris", "Q90")]);
        let spans = recognize_spans(&g, text, "en").unwrap();
        assert_eq!(starts_ends(&spans), oracle(text, &["Merkel", "Macron", "Paris"]));
        assert_eq!(spans.iter().filter(|s| s.surface == "Merkel").count(), 2);
    }

    #[test]
    fn word_boundaries_and_longest_match() {
        let g = gaz(&[("New York", "Q60"), ("York", "Q42462"), ("Paris", "Q90")]);
        let spans = recognize_spans(&g, "New York, Yorkshire and Parisian food in York", "en").unwrap();
        let surfaces: Vec<&str> = spans.iter().map(|s| s.surface.as_str()).collect();
        assert_eq!(surfaces, vec!["New York", "York"]);
        assert_eq!(spans[1].start, 41);
    }

    #[test]
    fn ambiguous_surface_yields_all_candidates() {
        let g = gaz(&[("Paris", "Q90"), ("Paris", "Q167646")]);
        let cands = g.candidates("Paris", Language::En).unwrap();
        assert_eq!(cands.len(), 2);
        assert!(cands.iter().all(|c| c.span.surface == "Paris" && c.pagerank == 1.0));
    }

    #[test]
    fn tsv_parsing() {
        let tsv = "# comment\nBarack Obama\tQ76\n\nBerlin\tQ64\r\n";
        let g = Gazetteer::from_tsv(tsv.as_bytes(), "gaz.tsv").unwrap();
        assert_eq!(g.len(), 2);
        let err = Gazetteer::from_tsv("Berlin Q64\n".as_bytes(), "gaz.tsv").unwrap_err();
        assert!(err.to_string().starts_with("gaz.tsv:1:"));
        assert!(Gazetteer::from_tsv("Berlin\tnot an id\n".as_bytes(), "g").is_err());
    }

    #[test]
    fn normalize_drops_overlaps() {
        let text = "abcdefgh";
        let spans = vec![
            TextSpan::new(text, 4, 6).unwrap(),
            TextSpan::new(text, 0, 3).unwrap(),
            TextSpan::new(text, 0, 2).unwrap(),
            TextSpan::new(text, 2, 5).unwrap(),
        ];
        assert_eq!(starts_ends(&normalize_spans(text, spans)), vec![(0, 3), (4, 6)]);
    }
}
