//! Built-in template rules, keyed by agent role.

use super::reasoner::{ReasonerQuery, TemplateRule, NOOP};

/// Replies with the last inbox payload verbatim, or no-op on an empty inbox.
pub fn echo_rule(query: &ReasonerQuery) -> Result<String, String> {
    Ok(query
        .inbox_items()
        .pop()
        .map(|(_, v)| v.to_string())
        .unwrap_or_else(|| NOOP.to_string()))
}

fn noop_rule(_: &ReasonerQuery) -> Result<String, String> {
    Ok(NOOP.to_string())
}

/// The rule a template backend uses for `role`, if any.
pub fn standard_rule(role: &str) -> Option<Box<dyn TemplateRule>> {
    let rule: Box<dyn TemplateRule> = match role {
        "echo" => Box::new(echo_rule),
        "noop" => Box::new(noop_rule),
        "diagnostics" => Box::new(crate::diagnostics::template_rule),
        "planner" => Box::new(crate::planner::template_rule),
        "student" => Box::new(crate::tuning::student_rule),
        "codesynth" => Box::new(crate::codesynth::template_rule),
        "commander" => Box::new(crate::mission::commander_rule),
        _ => return None,
    };
    Some(rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_returns_last_payload() {
        let q = ReasonerQuery {
            system_text: "ROLE: x".into(),
            context: vec![],
            user_content: "a/b {\"v\":1}\na/b {\"v\":2}\n".into(),
        };
        assert_eq!(echo_rule(&q).unwrap(), "{\"v\":2}");
        let empty = ReasonerQuery {
            user_content: String::new(),
            ..q
        };
        assert_eq!(echo_rule(&empty).unwrap(), NOOP);
    }

    #[test]
    fn unknown_role_has_no_rule() {
        assert!(standard_rule("teleporter").is_none());
        assert!(standard_rule("echo").is_some());
    }
}
