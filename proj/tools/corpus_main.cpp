// Writes the synthetic sentiment corpus as label<TAB>text lines.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "w2s/corpus.hpp"
#include "w2s/error.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthetic sentiment corpus generator"};
    w2s::CorpusSpec spec;
    std::string out;
    app.add_option("--out", out, "output TSV")->required();
    app.add_option("--examples", spec.examples)->capture_default_str();
    app.add_option("--min-words", spec.min_words)->capture_default_str();
    app.add_option("--max-words", spec.max_words)->capture_default_str();
    app.add_option("--min-polar", spec.min_polar)->capture_default_str();
    app.add_option("--max-polar", spec.max_polar)->capture_default_str();
    app.add_option("--distractor-rate", spec.distractor_rate)->capture_default_str();
    app.add_option("--label-noise", spec.label_noise)->capture_default_str();
    app.add_option("--seed", spec.seed)->capture_default_str();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        w2s::save_tsv(out, w2s::generate_corpus(spec));
    } catch (const w2s::Error& e) {
        std::cerr << "w2slab-corpus: " << e.what() << '\n';
        return w2s::exit_code_for(e.kind());
    }
    return 0;
}
