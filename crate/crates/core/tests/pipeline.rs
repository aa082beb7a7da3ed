use numex::corpus::{generate_synthetic, split_corpus, Corpus, GeneratorConfig};
use numex::eval::PipelineCounts;
use numex::pipeline::{train, Bundle, EntitySource, PipelineConfig};

fn scores(bundle: &Bundle, gold: &Corpus, source: EntitySource) -> (f64, f64) {
    let pred = bundle.extract_corpus(gold, source).unwrap();
    let mut counts = PipelineCounts::default();
    for (g, p) in gold.documents.iter().zip(&pred.documents) {
        counts.add_document(g, p).unwrap();
    }
    (counts.entities.total().f_score(), counts.relations.f_score())
}

#[test]
fn training_set_scores_at_least_as_well_as_held_out() {
    let corpus = generate_synthetic(60, 21, &GeneratorConfig::default());
    let (tr, te) = split_corpus(&corpus, 40, 21).unwrap();
    let bundle = train(&tr, &PipelineConfig::default()).unwrap();
    let (train_ner, _) = scores(&bundle, &tr, EntitySource::Predicted);
    let (test_ner, _) = scores(&bundle, &te, EntitySource::Predicted);
    assert!(train_ner >= test_ner, "{train_ner} < {test_ner}");
    assert!(test_ner > 0.8, "{test_ner}");
}

#[test]
fn gold_entities_pass_through_untouched() {
    let corpus = generate_synthetic(10, 4, &GeneratorConfig::default());
    let bundle = train(&corpus, &PipelineConfig::default()).unwrap();
    let pred = bundle.extract_corpus(&corpus, EntitySource::Gold).unwrap();
    for (g, p) in corpus.documents.iter().zip(&pred.documents) {
        assert_eq!(g.entities, p.entities);
        p.validate().unwrap();
        // each value is associated at most once
        let mut values: Vec<&str> = p.relations.iter().map(|r| r.value_id.as_str()).collect();
        let n = values.len();
        values.sort();
        values.dedup();
        assert_eq!(values.len(), n);
    }
}

#[test]
fn inverted_saturation_clause_is_paired() {
    let corpus = generate_synthetic(80, 9, &GeneratorConfig::default());
    let bundle = train(&corpus, &PipelineConfig::default()).unwrap();
    let doc = numex::corpus::Document::new(
        "s",
        "Vitals on transfer were 97% on 3 liters nasal cannula oxygen saturation, heart rate of 88.",
    );
    let out = bundle.extract(&doc, EntitySource::Predicted).unwrap();
    let pairs: Vec<(String, String)> = out
        .relations
        .iter()
        .map(|r| {
            (
                out.surface(out.entity(&r.attr_id).unwrap()),
                out.surface(out.entity(&r.value_id).unwrap()),
            )
        })
        .collect();
    assert!(pairs.contains(&("oxygen saturation".into(), "97%".into())), "{pairs:?}");
    assert!(pairs.contains(&("heart rate".into(), "88".into())), "{pairs:?}");
}
