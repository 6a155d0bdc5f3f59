//! Print the built-in keyword sets and load a custom lexicon file.
use keyweight::lexicon::{builtin, load_lexicon, to_lexicon_text, BuiltinSet};

fn main() {
    for set in [BuiltinSet::Diagnostic, BuiltinSet::Quantitative, BuiltinSet::Combined] {
        let kw = builtin(set);
        let head: Vec<&str> = kw.surfaces().take(6).collect();
        println!("{:<13} {:>2} words: {} ...", set.as_str(), kw.len(), head.join(", "));
    }

    let custom = "[diagnostic]\ngeographic atrophy\nDrusen\ndrusen\n[quantitative]\nenlarged\n";
    let loaded = load_lexicon("custom", custom).expect("valid lexicon");
    for w in &loaded.warnings {
        println!("warning: {w}");
    }
    print!("{}", to_lexicon_text(&loaded.set));
}
