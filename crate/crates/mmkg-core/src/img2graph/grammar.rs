//! The tuple-delimited record grammar used by entity/relation extraction
//! replies, plus a total (never-failing) parser and its inverse serializer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Delimiters splitting an extraction reply into records and fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordGrammar {
    pub tuple_delimiter: String,
    pub record_delimiter: String,
    pub completion_delimiter: String,
}

impl Default for RecordGrammar {
    fn default() -> Self {
        RecordGrammar {
            tuple_delimiter: "<|>".to_string(),
            record_delimiter: "##".to_string(),
            completion_delimiter: "<|COMPLETE|>".to_string(),
        }
    }
}

impl RecordGrammar {
    /// The three delimiters must be nonempty, pairwise distinct, and none
    /// may contain another as a substring (otherwise splitting is
    /// ambiguous).
    pub fn validate(&self) -> Result<()> {
        let delimiters = [
            ("tuple_delimiter", &self.tuple_delimiter),
            ("record_delimiter", &self.record_delimiter),
            ("completion_delimiter", &self.completion_delimiter),
        ];
        for (name, value) in &delimiters {
            if value.is_empty() {
                return Err(Error::Validation(format!("{name} must be nonempty")));
            }
        }
        for (i, (name_a, a)) in delimiters.iter().enumerate() {
            for (name_b, b) in delimiters.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::Validation(format!("{name_a} equals {name_b}")));
                }
                if a.contains(b.as_str()) || b.contains(a.as_str()) {
                    return Err(Error::Validation(format!(
                        "{name_a} and {name_b} overlap: one contains the other"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One parsed line of an extraction reply.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtractionRecord {
    Entity {
        name: String,
        entity_type: String,
        description: String,
    },
    Relationship {
        source: String,
        target: String,
        description: String,
        strength: f64,
    },
}

/// Split `text` into records. Malformed records are skipped and reported
/// as diagnostics; the parser never fails, whatever the input bytes.
pub fn parse_records(text: &str, grammar: &RecordGrammar) -> (Vec<ExtractionRecord>, Vec<String>) {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();

    // Everything after the completion delimiter is ignored.
    let body = match text.find(&grammar.completion_delimiter) {
        Some(end) => &text[..end],
        None => text,
    };

    for (index, segment) in body.split(&grammar.record_delimiter).enumerate() {
        let segment = segment.trim();
        if segment.is_empty() {
            continue;
        }
        match parse_segment(segment, grammar) {
            Ok(record) => records.push(record),
            Err(message) => diagnostics.push(format!("record {index}: {message}")),
        }
    }

    if records.is_empty() {
        diagnostics.push("no records".to_string());
    }
    (records, diagnostics)
}

fn parse_segment(segment: &str, grammar: &RecordGrammar) -> std::result::Result<ExtractionRecord, String> {
    // Outer parentheses are presentation, not content; fields protect
    // their own content with quotes.
    let segment = segment.strip_prefix('(').unwrap_or(segment);
    let segment = segment.strip_suffix(')').unwrap_or(segment);

    let fields: Vec<String> = segment
        .split(&grammar.tuple_delimiter)
        .map(unquote)
        .collect();
    if fields.is_empty() {
        return Err("empty record".to_string());
    }
    let kind = fields[0].to_lowercase();
    match kind.as_str() {
        "entity" => {
            if fields.len() != 4 {
                return Err(format!("expected 4 fields for entity, found {}", fields.len()));
            }
            Ok(ExtractionRecord::Entity {
                name: fields[1].clone(),
                entity_type: fields[2].clone(),
                description: fields[3].clone(),
            })
        }
        "relationship" => {
            if fields.len() != 5 {
                return Err(format!(
                    "expected 5 fields for relationship, found {}",
                    fields.len()
                ));
            }
            let strength: f64 = fields[4]
                .trim()
                .parse()
                .map_err(|_| format!("strength `{}` is not a number", fields[4]))?;
            if !(1.0..=10.0).contains(&strength) {
                return Err(format!("strength {strength} outside [1, 10]"));
            }
            Ok(ExtractionRecord::Relationship {
                source: fields[1].clone(),
                target: fields[2].clone(),
                description: fields[3].clone(),
                strength,
            })
        }
        other => Err(format!("unknown record kind `{other}`")),
    }
}

/// Trim whitespace, then strip one pair of surrounding double quotes.
fn unquote(field: &str) -> String {
    let field = field.trim();
    if field.len() >= 2 && field.starts_with('"') && field.ends_with('"') {
        field[1..field.len() - 1].to_string()
    } else {
        field.to_string()
    }
}

/// Render records in the reply format the extraction prompts request.
/// `parse_records` recovers the exact list as long as no field contains a
/// delimiter.
pub fn serialize_records(records: &[ExtractionRecord], grammar: &RecordGrammar) -> String {
    let td = &grammar.tuple_delimiter;
    let mut out = String::new();
    for record in records {
        match record {
            ExtractionRecord::Entity {
                name,
                entity_type,
                description,
            } => {
                out.push_str(&format!(
                    "(\"entity\"{td}\"{name}\"{td}\"{entity_type}\"{td}\"{description}\")"
                ));
            }
            ExtractionRecord::Relationship {
                source,
                target,
                description,
                strength,
            } => {
                out.push_str(&format!(
                    "(\"relationship\"{td}\"{source}\"{td}\"{target}\"{td}\"{description}\"{td}{strength})"
                ));
            }
        }
        out.push_str(&grammar.record_delimiter);
        out.push('\n');
    }
    out.push_str(&grammar.completion_delimiter);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grammar() -> RecordGrammar {
        RecordGrammar::default()
    }

    #[test]
    fn default_grammar_is_valid() {
        grammar().validate().unwrap();
    }

    #[test]
    fn overlapping_delimiters_are_rejected() {
        let bad = RecordGrammar {
            tuple_delimiter: "<|>".into(),
            record_delimiter: "<|".into(),
            completion_delimiter: "DONE".into(),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parses_entity_record() {
        let text = r#"("entity"<|>"GIRL"<|>"person"<|>"Wearing glasses, dressed in black, holding white and blue objects, smiling at the camera.")##"#;
        let (records, _) = parse_records(text, &grammar());
        assert_eq!(
            records,
            vec![ExtractionRecord::Entity {
                name: "GIRL".into(),
                entity_type: "person".into(),
                description: "Wearing glasses, dressed in black, holding white and blue objects, smiling at the camera.".into(),
            }]
        );
    }

    #[test]
    fn parses_relationship_record() {
        let text = r#"("relationship"<|>"Girl"<|>"Headphones"<|>"The girl is wearing headphones."<|>8)##"#;
        let (records, _) = parse_records(text, &grammar());
        assert_eq!(
            records,
            vec![ExtractionRecord::Relationship {
                source: "Girl".into(),
                target: "Headphones".into(),
                description: "The girl is wearing headphones.".into(),
                strength: 8.0,
            }]
        );
    }

    #[test]
    fn wrong_arity_yields_diagnostic_not_record() {
        let text = r#"("entity"<|>"A"<|>"b")##"#;
        let (records, diagnostics) = parse_records(text, &grammar());
        assert!(records.is_empty());
        assert!(diagnostics.iter().any(|d| d.contains("expected 4 fields")));
    }

    #[test]
    fn empty_input_reports_no_records() {
        let (records, diagnostics) = parse_records("", &grammar());
        assert!(records.is_empty());
        assert_eq!(diagnostics, vec!["no records".to_string()]);
    }

    #[test]
    fn parsing_stops_at_completion_delimiter() {
        let text = r#"("entity"<|>"A"<|>"t"<|>"d")##<|COMPLETE|>("entity"<|>"B"<|>"t"<|>"d")##"#;
        let (records, _) = parse_records(text, &grammar());
        assert_eq!(records.len(), 1);
    }

    #[test]
    fn out_of_range_strength_is_skipped() {
        let text = r#"("relationship"<|>"A"<|>"B"<|>"d"<|>11)##"#;
        let (records, diagnostics) = parse_records(text, &grammar());
        assert!(records.is_empty());
        assert!(diagnostics.iter().any(|d| d.contains("outside")));
    }

    #[test]
    fn one_bad_record_does_not_abort_the_batch() {
        let text = r#"("entity"<|>"A"<|>"t"<|>"d")##garbage##("entity"<|>"B"<|>"t"<|>"d")##"#;
        let (records, diagnostics) = parse_records(text, &grammar());
        assert_eq!(records.len(), 2);
        assert_eq!(diagnostics.len(), 1);
    }

    #[test]
    fn round_trip_preserves_awkward_content() {
        let records = vec![
            ExtractionRecord::Entity {
                name: "R&D (LAB)".into(),
                entity_type: "org".into(),
                description: "has \"quotes\" inside".into(),
            },
            ExtractionRecord::Relationship {
                source: "A#".into(),
                target: "<B".into(),
                description: "trailing paren )".into(),
                strength: 7.5,
            },
        ];
        let g = grammar();
        let (parsed, _) = parse_records(&serialize_records(&records, &g), &g);
        assert_eq!(parsed, records);
    }
}
