//! Behavioural scaffold rendered into the reasoner's system text.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constitution {
    pub core_directive: String,
    pub domain_knowledge: Vec<String>,
    pub reasoning_guidelines: Vec<String>,
    pub output_schema_id: String,
    pub constraint_clauses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConstitutionError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("missing `{0}`")]
    Missing(&'static str),
}

impl Constitution {
    pub fn new(core_directive: &str, output_schema_id: &str) -> Self {
        Self {
            core_directive: core_directive.to_string(),
            domain_knowledge: Vec::new(),
            reasoning_guidelines: Vec::new(),
            output_schema_id: output_schema_id.to_string(),
            constraint_clauses: Vec::new(),
        }
    }

    pub fn knowledge(mut self, fact: &str) -> Self {
        self.domain_knowledge.push(fact.to_string());
        self
    }

    pub fn guideline(mut self, rule: &str) -> Self {
        self.reasoning_guidelines.push(rule.to_string());
        self
    }

    pub fn with_clause(mut self, clause: &str) -> Self {
        self.constraint_clauses.push(clause.to_string());
        self
    }

    /// System text in fixed section order: directive, knowledge,
    /// guidelines, constraints, output format.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("ROLE: ");
        out.push_str(self.core_directive.trim());
        out.push('\n');
        out.push_str("DOMAIN KNOWLEDGE:\n");
        for k in &self.domain_knowledge {
            out.push_str("- ");
            out.push_str(k);
            out.push('\n');
        }
        out.push_str("REASONING GUIDELINES:\n");
        for (i, g) in self.reasoning_guidelines.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, g));
        }
        out.push_str("CONSTRAINTS:\n");
        for c in &self.constraint_clauses {
            out.push_str("- ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(&format!(
            "OUTPUT FORMAT: reply with exactly one JSON object conforming to schema `{}`, or the single word NOOP.\n",
            self.output_schema_id
        ));
        out
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))[..16].to_string()
    }

    /// First number following `key` in a domain-knowledge fact,
    /// e.g. `bounding radius: 0.4 m`.
    pub fn knowledge_value(&self, key: &str) -> Option<f64> {
        let key = key.to_lowercase();
        self.domain_knowledge.iter().find_map(|fact| {
            let lower = fact.to_lowercase();
            let at = lower.find(&key)?;
            first_number(&lower[at + key.len()..])
        })
    }

    /// Parses the on-disk `key: value` form.
    pub fn parse(text: &str) -> Result<Self, ConstitutionError> {
        let mut directive = None;
        let mut schema = None;
        let mut lists: [Vec<String>; 3] = Default::default();
        let mut current: Option<usize> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(item) = line.strip_prefix("- ") {
                let idx = current.ok_or_else(|| ConstitutionError::Parse {
                    line: line_no,
                    reason: "list item outside a list section".into(),
                })?;
                lists[idx].push(item.trim().to_string());
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| ConstitutionError::Parse {
                line: line_no,
                reason: format!("expected `key: value`, got `{line}`"),
            })?;
            let value = value.trim();
            current = None;
            match key.trim() {
                "core_directive" => directive = Some(value.to_string()),
                "output_schema_id" => schema = Some(value.to_string()),
                k @ ("domain_knowledge" | "reasoning_guidelines" | "constraint_clauses") => {
                    if !value.is_empty() {
                        return Err(ConstitutionError::Parse {
                            line: line_no,
                            reason: format!("`{k}` is a list section; put items on `- ` lines"),
                        });
                    }
                    current = Some(match k {
                        "domain_knowledge" => 0,
                        "reasoning_guidelines" => 1,
                        _ => 2,
                    });
                }
                other => {
                    return Err(ConstitutionError::Parse {
                        line: line_no,
                        reason: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        let [domain_knowledge, reasoning_guidelines, constraint_clauses] = lists;
        Ok(Self {
            core_directive: directive.ok_or(ConstitutionError::Missing("core_directive"))?,
            output_schema_id: schema.ok_or(ConstitutionError::Missing("output_schema_id"))?,
            domain_knowledge,
            reasoning_guidelines,
            constraint_clauses,
        })
    }

    pub fn to_file_text(&self) -> String {
        let mut out = format!(
            "core_directive: {}\noutput_schema_id: {}\n",
            self.core_directive, self.output_schema_id
        );
        for (name, items) in [
            ("domain_knowledge", &self.domain_knowledge),
            ("reasoning_guidelines", &self.reasoning_guidelines),
            ("constraint_clauses", &self.constraint_clauses),
        ] {
            out.push_str(name);
            out.push_str(":\n");
            for it in items {
                out.push_str("  - ");
                out.push_str(it);
                out.push('\n');
            }
        }
        out
    }
}

pub(crate) fn first_number(s: &str) -> Option<f64> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let starts =
            c.is_ascii_digit() || ((c == '-' || c == '.') && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()));
        if starts {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                j += 1;
            }
            if let Ok(v) = s[i..j].trim_end_matches('.').parse() {
                return Some(v);
            }
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planner() -> Constitution {
        Constitution::new("You are a motion planner.", "waypoint_list")
            .knowledge("tether length: 10 m")
            .knowledge("bounding radius: 0.4 m")
            .guideline("Plan around every detected obstacle.")
    }

    #[test]
    fn render_is_deterministic_and_ordered() {
        let c = planner();
        let r = c.render();
        assert_eq!(r, c.clone().render());
        let pos = |s: &str| r.find(s).unwrap();
        assert!(pos("ROLE:") < pos("DOMAIN KNOWLEDGE:"));
        assert!(pos("DOMAIN KNOWLEDGE:") < pos("REASONING GUIDELINES:"));
        assert!(pos("REASONING GUIDELINES:") < pos("CONSTRAINTS:"));
        assert!(pos("CONSTRAINTS:") < pos("OUTPUT FORMAT:"));
    }

    #[test]
    fn appended_clause_is_the_only_change() {
        let before = planner().render();
        let after = planner().with_clause("report only presence and location").render();
        let b: Vec<&str> = before.lines().collect();
        let a: Vec<&str> = after.lines().collect();
        assert_eq!(a.len(), b.len() + 1);
        let at = b.iter().position(|l| l.starts_with("OUTPUT FORMAT")).unwrap();
        assert_eq!(a[at], "- report only presence and location");
        assert_eq!(&a[..at], &b[..at]);
        assert_eq!(&a[at + 1..], &b[at..]);
    }

    #[test]
    fn knowledge_values() {
        let c = planner();
        assert_eq!(c.knowledge_value("tether length"), Some(10.0));
        assert_eq!(c.knowledge_value("Bounding Radius"), Some(0.4));
        assert_eq!(c.knowledge_value("max depth"), None);
    }

    #[test]
    fn file_round_trip() {
        let c = planner().with_clause("respond in one sentence");
        let text = c.to_file_text();
        assert_eq!(Constitution::parse(&text).unwrap(), c);
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let err = Constitution::parse("core_directive: x\nwhat is this\n").unwrap_err();
        assert_eq!(
            err,
            ConstitutionError::Parse {
                line: 2,
                reason: "expected `key: value`, got `what is this`".into()
            }
        );
        assert_eq!(
            Constitution::parse("core_directive: x\n").unwrap_err(),
            ConstitutionError::Missing("output_schema_id")
        );
        assert!(matches!(
            Constitution::parse("- stray\n"),
            Err(ConstitutionError::Parse { line: 1, .. })
        ));
    }
}
