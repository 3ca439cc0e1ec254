use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{PmiRecord, TokenPmiRecord};
use crate::error::{Error, Result};
use crate::lexicon::{Alphabet, Macroarea};

pub const PMI_RECORD_COLUMNS: [&str; 8] = [
    "doculect_id",
    "family",
    "macroarea",
    "concept_id",
    "word_xent_uncond",
    "word_xent_cond",
    "pmi",
    "phone_count",
];

pub const TOKEN_RECORD_COLUMNS: [&str; 7] = [
    "doculect_id",
    "family",
    "macroarea",
    "concept_id",
    "position",
    "symbol",
    "pmi_token",
];

#[derive(Serialize, Deserialize)]
struct PmiRow {
    doculect_id: String,
    family: String,
    macroarea: Macroarea,
    concept_id: String,
    word_xent_uncond: f64,
    word_xent_cond: f64,
    pmi: f64,
    phone_count: usize,
}

#[derive(Serialize, Deserialize)]
struct TokenRow {
    doculect_id: String,
    family: String,
    macroarea: Macroarea,
    concept_id: String,
    position: usize,
    symbol: String,
    pmi_token: f64,
}

fn concept_name(concepts: &[String], id: usize) -> Result<String> {
    concepts
        .get(id)
        .cloned()
        .ok_or_else(|| Error::data(format!("concept id {id} has no name")))
}

fn concept_lookup(concepts: &[String]) -> BTreeMap<&str, usize> {
    concepts
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect()
}

fn language_of<'a>(languages: &'a BTreeMap<String, String>, doculect: &str) -> Result<&'a String> {
    languages
        .get(doculect)
        .ok_or_else(|| Error::data(format!("doculect {doculect} missing from doculect table")))
}

/// Concept ids are written as concept names.
pub fn write_pmi_records<W: Write>(out: W, records: &[PmiRecord], concepts: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(PMI_RECORD_COLUMNS)?;
    }
    for r in records {
        w.serialize(PmiRow {
            doculect_id: r.doculect_id.clone(),
            family: r.family.clone(),
            macroarea: r.macroarea,
            concept_id: concept_name(concepts, r.concept_id)?,
            word_xent_uncond: r.word_xent_uncond,
            word_xent_cond: r.word_xent_cond,
            pmi: r.pmi,
            phone_count: r.phone_count,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// `languages` maps doculect id to language key.
pub fn read_pmi_records<R: Read>(
    input: R,
    concepts: &[String],
    languages: &BTreeMap<String, String>,
) -> Result<Vec<PmiRecord>> {
    let lookup = concept_lookup(concepts);
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != PMI_RECORD_COLUMNS {
        return Err(Error::data(format!("unexpected PMI record header {header:?}")));
    }
    rd.deserialize::<PmiRow>()
        .map(|row| {
            let row = row?;
            let concept_id = *lookup
                .get(row.concept_id.as_str())
                .ok_or_else(|| Error::data(format!("unknown concept {}", row.concept_id)))?;
            Ok(PmiRecord {
                language: language_of(languages, &row.doculect_id)?.clone(),
                doculect_id: row.doculect_id,
                family: row.family,
                macroarea: row.macroarea,
                concept_id,
                word_xent_uncond: row.word_xent_uncond,
                word_xent_cond: row.word_xent_cond,
                pmi: row.pmi,
                phone_count: row.phone_count,
            })
        })
        .collect()
}

/// Symbols are written in their alphabet spelling, eos as `<eos>`.
pub fn write_token_records<W: Write>(
    out: W,
    records: &[TokenPmiRecord],
    concepts: &[String],
    alphabet: &Alphabet,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(TOKEN_RECORD_COLUMNS)?;
    }
    for r in records {
        w.serialize(TokenRow {
            doculect_id: r.doculect_id.clone(),
            family: r.family.clone(),
            macroarea: r.macroarea,
            concept_id: concept_name(concepts, r.concept_id)?,
            position: r.position,
            symbol: alphabet.symbol(r.symbol).to_string(),
            pmi_token: r.pmi_token,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_token_records<R: Read>(
    input: R,
    concepts: &[String],
    alphabet: &Alphabet,
    languages: &BTreeMap<String, String>,
) -> Result<Vec<TokenPmiRecord>> {
    let lookup = concept_lookup(concepts);
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != TOKEN_RECORD_COLUMNS {
        return Err(Error::data(format!("unexpected token record header {header:?}")));
    }
    rd.deserialize::<TokenRow>()
        .map(|row| {
            let row = row?;
            let concept_id = *lookup
                .get(row.concept_id.as_str())
                .ok_or_else(|| Error::data(format!("unknown concept {}", row.concept_id)))?;
            let symbol = if row.symbol == alphabet.symbol(alphabet.eos()) {
                alphabet.eos()
            } else {
                alphabet
                    .lookup(&row.symbol)
                    .ok_or_else(|| Error::data(format!("unknown symbol {:?}", row.symbol)))?
            };
            Ok(TokenPmiRecord {
                language: language_of(languages, &row.doculect_id)?.clone(),
                doculect_id: row.doculect_id,
                family: row.family,
                macroarea: row.macroarea,
                concept_id,
                position: row.position,
                symbol,
                pmi_token: row.pmi_token,
            })
        })
        .collect()
}
