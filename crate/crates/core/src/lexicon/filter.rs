use std::collections::BTreeSet;

use log::info;

use super::{Lexicon, StatusFlag};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FilterPolicy {
    /// Doculects carrying any of these flags are removed.
    pub exclude_flags: BTreeSet<StatusFlag>,
    pub drop_loans: bool,
}

impl FilterPolicy {
    /// Removes pidgins, creoles, constructed languages and loanwords.
    pub fn standard() -> Self {
        Self {
            exclude_flags: [StatusFlag::PidginCreole, StatusFlag::Constructed]
                .into_iter()
                .collect(),
            drop_loans: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub doculects_in: usize,
    pub doculects_flagged: usize,
    pub loans_dropped: usize,
    /// Doculects left with no entries after loan removal.
    pub doculects_emptied: usize,
    pub doculects_out: usize,
    pub words_out: usize,
}

pub fn filter_lexicon(lex: Lexicon, policy: &FilterPolicy) -> Result<(Lexicon, FilterReport)> {
    let mut report = FilterReport {
        doculects_in: lex.doculects.len(),
        ..Default::default()
    };
    let Lexicon {
        alphabet,
        concepts,
        doculects,
    } = lex;
    let mut kept = Vec::with_capacity(doculects.len());
    for mut d in doculects {
        if d.status_flags.iter().any(|f| policy.exclude_flags.contains(f)) {
            report.doculects_flagged += 1;
            continue;
        }
        if policy.drop_loans {
            let before = d.entries.len();
            d.entries.retain(|e| !e.loan);
            report.loans_dropped += before - d.entries.len();
            if d.entries.is_empty() {
                report.doculects_emptied += 1;
                continue;
            }
        }
        kept.push(d);
    }
    report.doculects_out = kept.len();
    report.words_out = kept.iter().map(|d| d.entries.len()).sum();
    if kept.is_empty() {
        return Err(Error::data(format!(
            "filtering removed every doculect ({} in, {} flagged, {} emptied by dropping {} loans)",
            report.doculects_in, report.doculects_flagged, report.doculects_emptied, report.loans_dropped
        )));
    }
    info!(
        "filter: {} -> {} doculects ({} flagged, {} loans dropped)",
        report.doculects_in, report.doculects_out, report.doculects_flagged, report.loans_dropped
    );
    Ok((
        Lexicon {
            alphabet,
            concepts,
            doculects: kept,
        },
        report,
    ))
}
