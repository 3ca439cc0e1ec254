use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Read;

use log::warn;

use super::{Alphabet, Doculect, Lexicon, Macroarea, StatusFlag, WordEntry};
use crate::error::{Error, Result};

/// Header of the wordlist TSV, in order.
pub const TSV_COLUMNS: [&str; 10] = [
    "doculect_id",
    "iso_code",
    "family",
    "macroarea",
    "latitude",
    "longitude",
    "status_flags",
    "concept",
    "form",
    "loan",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InputFormat {
    /// Forms are already plain symbol strings.
    #[default]
    Tsv,
    /// Same columns, but the form column holds raw ASJP transcriptions
    /// (modifier marks, comma-separated synonyms, `%` loan prefix) that are
    /// normalized with [`normalize_asjp_form`].
    AsjpForms,
}

/// A row-level problem that did not abort parsing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct ParsedLexicon {
    pub lexicon: Lexicon,
    pub diagnostics: Vec<Diagnostic>,
}

/// Reduces a raw ASJP transcription to base symbols.
///
/// Keeps the first of several comma-separated synonyms, strips the `*`
/// (nasalization), `"` (glottalization), `~` and `$` (juxtaposition) marks,
/// and reports a leading `%` as a loan marker.
pub fn normalize_asjp_form(raw: &str) -> (String, bool) {
    let first = raw.split(',').next().unwrap_or("").trim();
    let loan = first.starts_with('%');
    let form = first
        .chars()
        .filter(|c| !matches!(c, '*' | '"' | '~' | '$' | '%') && !c.is_whitespace())
        .collect();
    (form, loan)
}

pub fn parse_wordlists(
    mut raw: impl Read,
    alphabet: &Alphabet,
    format: InputFormat,
) -> Result<ParsedLexicon> {
    let mut bytes = Vec::new();
    raw.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        let line = 1 + e.as_bytes()[..e.utf8_error().valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count();
        Error::Parse {
            line,
            message: "input is not valid UTF-8".into(),
        }
    })?;

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (header_line, header) = lines
        .by_ref()
        .find(|(_, l)| !l.is_empty())
        .ok_or(Error::Parse {
            line: 1,
            message: "empty input".into(),
        })?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != TSV_COLUMNS {
        return Err(Error::Parse {
            line: header_line,
            message: format!(
                "malformed header: expected {:?}, found {:?}",
                TSV_COLUMNS.join("\t"),
                header
            ),
        });
    }

    let mut diagnostics = Vec::new();
    let mut concepts: Vec<String> = Vec::new();
    let mut concept_ids: HashMap<String, usize> = HashMap::new();
    let mut doculects: Vec<Doculect> = Vec::new();
    let mut doculect_pos: HashMap<String, usize> = HashMap::new();
    let mut seen_pairs: BTreeSet<(usize, usize)> = BTreeSet::new();

    for (line, row) in lines {
        if row.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = row.split('\t').collect();
        if f.len() != TSV_COLUMNS.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", TSV_COLUMNS.len(), f.len()),
            });
        }
        let parse_err = |message: String| Error::Parse { line, message };
        let doculect_id = f[0].trim();
        if doculect_id.is_empty() {
            return Err(parse_err("empty doculect_id".into()));
        }
        let macroarea: Macroarea = f[3]
            .parse()
            .map_err(|_| parse_err(format!("unknown macroarea {:?}", f[3])))?;
        let latitude: f64 = f[4]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad latitude {:?}", f[4])))?;
        let longitude: f64 = f[5]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad longitude {:?}", f[5])))?;
        let status_flags = f[6]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<StatusFlag>().map_err(|e| parse_err(e.to_string())))
            .collect::<Result<BTreeSet<_>>>()?;
        let concept = f[7].trim();
        if concept.is_empty() {
            return Err(parse_err("empty concept".into()));
        }
        let mut loan = match f[9].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(format!("loan must be 0 or 1, found {other:?}"))),
        };

        let concept_id = *concept_ids.entry(concept.to_owned()).or_insert_with(|| {
            concepts.push(concept.to_owned());
            concepts.len() - 1
        });

        let pos = match doculect_pos.get(doculect_id) {
            Some(&p) => {
                let d = &doculects[p];
                if d.family != f[2].trim() || d.macroarea != macroarea {
                    diagnostics.push(Diagnostic {
                        line,
                        message: format!(
                            "metadata for {doculect_id} differs from its first row; first row kept"
                        ),
                    });
                }
                p
            }
            None => {
                let iso = f[1].trim();
                doculects.push(Doculect {
                    doculect_id: doculect_id.to_owned(),
                    iso_code: (!iso.is_empty()).then(|| iso.to_owned()),
                    family: f[2].trim().to_owned(),
                    macroarea,
                    latitude,
                    longitude,
                    status_flags,
                    entries: Vec::new(),
                });
                doculect_pos.insert(doculect_id.to_owned(), doculects.len() - 1);
                doculects.len() - 1
            }
        };

        let form = match format {
            InputFormat::Tsv => f[8].trim().to_owned(),
            InputFormat::AsjpForms => {
                let (form, marked) = normalize_asjp_form(f[8]);
                loan |= marked;
                form
            }
        };
        if form.is_empty() {
            diagnostics.push(Diagnostic {
                line,
                message: format!("{doculect_id}/{concept}: empty form, row rejected"),
            });
            continue;
        }
        let phones = match alphabet.encode(&form) {
            Ok(p) => p,
            Err(sym) => {
                diagnostics.push(Diagnostic {
                    line,
                    message: format!(
                        "{doculect_id}/{concept}: undeclared symbol {sym:?} in {form:?}, row rejected"
                    ),
                });
                continue;
            }
        };
        if !seen_pairs.insert((pos, concept_id)) {
            diagnostics.push(Diagnostic {
                line,
                message: format!("{doculect_id}/{concept}: duplicate entry, first kept"),
            });
            continue;
        }
        doculects[pos].entries.push(WordEntry {
            concept_id,
            phones,
            loan,
        });
    }

    if concepts.is_empty() {
        return Err(Error::Parse {
            line: header_line,
            message: "no concepts found (K = 0)".into(),
        });
    }
    for d in &diagnostics {
        warn!("line {}: {}", d.line, d.message);
    }
    let lexicon = Lexicon {
        alphabet: alphabet.clone(),
        concepts,
        doculects,
    };
    Ok(ParsedLexicon {
        lexicon,
        diagnostics,
    })
}

/// Renders a lexicon in the TSV format, one row per entry, doculects and
/// entries in stored order.
pub fn serialize_wordlists(lex: &Lexicon) -> String {
    let mut out = TSV_COLUMNS.join("\t");
    out.push('\n');
    for d in &lex.doculects {
        let flags: Vec<&str> = d.status_flags.iter().map(|f| f.as_str()).collect();
        for e in &d.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                d.doculect_id,
                d.iso_code.as_deref().unwrap_or(""),
                d.family,
                d.macroarea,
                d.latitude,
                d.longitude,
                flags.join(","),
                lex.concepts[e.concept_id],
                lex.alphabet.decode(&e.phones),
                u8::from(e.loan),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "doculect_id\tiso_code\tfamily\tmacroarea\tlatitude\tlongitude\tstatus_flags\tconcept\tform\tloan\n";

    fn parse(body: &str) -> Result<ParsedLexicon> {
        let text = format!("{HEADER}{body}");
        parse_wordlists(text.as_bytes(), &Alphabet::asjp(), InputFormat::Tsv)
    }

    #[test]
    fn minimal_three_rows() {
        let p = parse(
            "A\taaa\tF1\tAfrica\t1.5\t2\t\ttongue\tlilim\t0\n\
             A\taaa\tF1\tAfrica\t1.5\t2\t\tdog\tbwa\t0\n\
             A\taaa\tF1\tAfrica\t1.5\t2\t\tI\tna\t0\n",
        )
        .unwrap();
        assert_eq!(p.lexicon.n_concepts(), 3);
        assert_eq!(p.lexicon.doculects.len(), 1);
        assert_eq!(p.lexicon.doculects[0].entries.len(), 3);
        assert!(p.diagnostics.is_empty());
        p.lexicon.validate().unwrap();
    }

    #[test]
    fn undeclared_symbol_rejects_row_only() {
        let p = parse(
            "A\t\tF1\tAfrica\t0\t0\t\ttongue\tlʘm\t0\n\
             A\t\tF1\tAfrica\t0\t0\t\tdog\tbwa\t0\n",
        )
        .unwrap();
        assert_eq!(p.lexicon.doculects[0].entries.len(), 1);
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].line, 2);
        assert!(p.diagnostics[0].message.contains('ʘ'));
    }

    #[test]
    fn duplicate_concept_keeps_first() {
        let p = parse(
            "A\t\tF1\tAfrica\t0\t0\t\tdog\tbwa\t0\n\
             A\t\tF1\tAfrica\t0\t0\t\tdog\tkuta\t0\n",
        )
        .unwrap();
        let d = &p.lexicon.doculects[0];
        assert_eq!(d.entries.len(), 1);
        assert_eq!(p.lexicon.alphabet.decode(&d.entries[0].phones), "bwa");
    }

    #[test]
    fn header_and_macroarea_errors_are_fatal() {
        let bad = "doculect\tiso\n";
        match parse_wordlists(bad.as_bytes(), &Alphabet::asjp(), InputFormat::Tsv) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse("A\t\tF1\tAtlantis\t0\t0\t\tdog\tbwa\t0\n") {
            Err(Error::Parse { line: 2, message }) => assert!(message.contains("macroarea")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn asjp_forms_are_normalized() {
        assert_eq!(normalize_asjp_form("t*u~N, kuku"), ("tuN".to_owned(), false));
        assert_eq!(normalize_asjp_form("%tSa\"i$"), ("tSai".to_owned(), true));
        let text = format!("{HEADER}A\t\tF1\tEurasia\t0\t0\t\tdog\t%ku*ta\t0\n");
        let p = parse_wordlists(text.as_bytes(), &Alphabet::asjp(), InputFormat::AsjpForms).unwrap();
        let e = &p.lexicon.doculects[0].entries[0];
        assert!(e.loan);
        assert_eq!(p.lexicon.alphabet.decode(&e.phones), "kuta");
    }

    #[test]
    fn serialize_normalizes_numbers_and_flags() {
        let p = parse("A\tx\tF\tPacific\t1.50\t-2.0\tconstructed,pidgin_creole\tdog\tbwa\t1\n").unwrap();
        let s = serialize_wordlists(&p.lexicon);
        assert_eq!(
            s,
            format!("{HEADER}A\tx\tF\tPacific\t1.5\t-2\tpidgin_creole,constructed\tdog\tbwa\t1\n")
        );
    }
}
