//! The three corpus generators, written to and read back from the text format.

use natlab::data::{
    gen_synthetic, gen_two_mode, load_corpus, save_corpus, GeneratorSpec, MarkovSpec, StyleSpec,
    Vocab,
};

fn main() -> natlab::Result<()> {
    let dir = std::env::temp_dir().join("natlab-corpora-example");
    std::fs::create_dir_all(&dir).map_err(|e| natlab::NatError::io(&dir, e))?;

    let styles = StyleSpec {
        sources: 40,
        min_len: 3,
        max_len: 5,
        styles: 2,
        weights: vec![0.6, 0.4],
        jitter: 0.0,
        reorder: true,
        context: false,
        seed: 5,
    };
    let spec = GeneratorSpec::styles(8, &styles)?;
    let (mut corpus, _) = gen_two_mode(&spec, 30, 1)?;
    corpus.attach_references(3, 9)?;
    let v = corpus.vocab().clone();
    println!("styles corpus:");
    for (i, (x, y)) in corpus.pairs.iter().take(4).enumerate() {
        let refs: Vec<String> = corpus.references(i).iter().map(|r| v.decode(r)).collect();
        println!(
            "  {}  ->  {}   refs: {}",
            v.decode(x),
            v.decode(y),
            refs.join(" | ")
        );
    }

    let chain = MarkovSpec::random(8, 2, (4, 7), 0.3, 0.1, 2);
    let markov = gen_synthetic(
        &GeneratorSpec::markov(Vocab::with_content_size(8), chain)?,
        4,
        1,
    )?;
    println!("markov corruption corpus:");
    for (x, y) in &markov.pairs {
        println!(
            "  {}  ->  {}",
            markov.vocab().decode(x),
            markov.vocab().decode(y)
        );
    }

    let path = dir.join("styles.tsv");
    save_corpus(&corpus, &path)?;
    let back = load_corpus(&path)?;
    println!(
        "round trip through {}: identical = {}",
        path.display(),
        back == corpus
    );
    let toy = gen_two_mode(&GeneratorSpec::two_mode_toy(), 4, 1)?.0;
    println!("two-mode toy has {} pairs", toy.len());
    Ok(())
}
