//! Tab-delimited line encoding with RFC-4180-style quoting.

/// Appends `field` to `line`, quoting it when it holds a tab, quote or line break.
pub fn push_field(line: &mut String, field: &str) {
    if field.contains(['\t', '"', '\n', '\r']) {
        line.push('"');
        for ch in field.chars() {
            if ch == '"' {
                line.push('"');
            }
            line.push(ch);
        }
        line.push('"');
    } else {
        line.push_str(field);
    }
}

/// Encodes `fields` as one tab-separated line terminated by `\n`.
pub fn encode_line<'a, I>(fields: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    let mut line = String::new();
    for (i, f) in fields.into_iter().enumerate() {
        if i > 0 {
            line.push('\t');
        }
        push_field(&mut line, f);
    }
    line.push('\n');
    line
}

/// A `csv` reader configured for this encoding.
pub fn reader_builder() -> csv::ReaderBuilder {
    let mut b = csv::ReaderBuilder::new();
    b.delimiter(b'\t')
        .quoting(true)
        .double_quote(true)
        .flexible(true)
        .trim(csv::Trim::None);
    b
}
