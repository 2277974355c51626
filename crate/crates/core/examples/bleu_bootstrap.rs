//! Corpus BLEU and the paired bootstrap on two toy systems.

use morphnmt::eval::{bleu, paired_bootstrap};

fn main() -> morphnmt::Result<()> {
    let refs = [
        "biz dun aksam evlerimizden geldik",
        "butun kitaplar yine masada duruyor",
        "cocuklar bugun okulda kaldilar",
        "onlar yarin sabah gelecekler",
    ];
    let a = [
        "biz dun aksam evlerimizden geldik",
        "butun kitaplar yine masada duruyor",
        "cocuklar bugun okulda kaldilar",
        "onlar yarin sabah gelecek",
    ];
    let b = [
        "biz dun aksam evlerimiz geldik",
        "butun kitap yine masada duruyor",
        "cocuklar bugun okul kaldi",
        "onlar yarin sabah gelecek",
    ];

    for (name, sys) in [("A", &a), ("B", &b)] {
        let s = bleu(sys, &refs)?;
        println!("{name}: BLEU {:.4} precisions {:.3?} bp {:.4}", s.value, s.precisions, s.brevity_penalty);
    }
    let report = paired_bootstrap(&a, &b, &refs, 1000, 0.05, 1)?;
    println!("A beats B in {:.1}% of resamples, significant: {}", 100.0 * report.win_fraction_a, report.significant);
    let same = paired_bootstrap(&a, &a, &refs, 1000, 0.05, 1)?;
    println!("A against itself: significant {}", same.significant);
    Ok(())
}
