//! `cache-control` metadata carrying a relative `max-age` in whole seconds.

/// Metadata key; keys on the wire are lowercase.
pub const CACHE_CONTROL: &str = "cache-control";

pub fn max_age_value(seconds: u32) -> String {
    format!("max-age={seconds}")
}

/// Extracts `max-age` from a directive list such as `"public, max-age=5"`.
///
/// Unknown directives are ignored. A `max-age` that is not a plain decimal
/// integer makes the whole header count as absent.
pub fn parse_max_age(value: &str) -> Option<u32> {
    for directive in value.split(',') {
        let directive = directive.trim();
        let Some((name, arg)) = directive.split_once('=') else {
            continue;
        };
        if !name.trim().eq_ignore_ascii_case("max-age") {
            continue;
        }
        let arg = arg.trim();
        if arg.is_empty() || !arg.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        return arg.parse().ok();
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_and_parses() {
        assert_eq!(max_age_value(5), "max-age=5");
        assert_eq!(parse_max_age("max-age=5"), Some(5));
        assert_eq!(parse_max_age("max-age=0"), Some(0));
    }

    #[test]
    fn ignores_unknown_directives() {
        assert_eq!(parse_max_age("no-transform, max-age=12"), Some(12));
        assert_eq!(parse_max_age("private"), None);
    }

    #[test]
    fn malformed_is_absent() {
        assert_eq!(parse_max_age("max-age=-1"), None);
        assert_eq!(parse_max_age("max-age=1.5"), None);
        assert_eq!(parse_max_age("max-age="), None);
        assert_eq!(parse_max_age("max-age=99999999999"), None);
    }
}
