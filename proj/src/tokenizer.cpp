#include "vstream/tokenizer.hpp"

#include <algorithm>
#include <cctype>

#include "vstream/errors.hpp"

namespace vstream {

namespace {

bool is_punct(char c) { return c == ',' || c == '.' || c == '?'; }

} // namespace

Vocab::Vocab() {
    words_ = {"<pad>", "<bos>", "<eos>"};
    pad_ = 0;
    bos_ = 1;
    eos_ = 2;
    digit0_ = static_cast<int>(words_.size());
    for (int d = 0; d < 10; ++d) {
        words_.push_back(std::to_string(d));
    }
    for (const char *w : {",", ".", "?", "This", "contains", "a", "history", "of", "to", "seconds", "and", "clip",
                          "sampled", "in", "is", "The", "shows", "What", "symbol", "appears", "from", "When", "does",
                          "appear", "How", "many", "distinct", "symbols"}) {
        words_.emplace_back(w);
    }
    nothing_ = static_cast<int>(words_.size());
    words_.emplace_back("nothing");
    symbol0_ = static_cast<int>(words_.size());
    for (char c = 'A'; c <= 'Z'; ++c) {
        words_.emplace_back(1, c);
    }
    bucket0_ = static_cast<int>(words_.size());
    for (const char *w : {"first", "second", "third", "fourth"}) {
        words_.emplace_back(w);
    }
}

const Vocab &Vocab::get() {
    static const Vocab v;
    return v;
}

int Vocab::id(std::string_view word) const {
    auto it = std::find(words_.begin(), words_.end(), word);
    if (it == words_.end()) {
        throw DataError("unknown word '" + std::string(word) + "'");
    }
    return static_cast<int>(it - words_.begin());
}

bool Vocab::contains(std::string_view word) const {
    return std::find(words_.begin(), words_.end(), word) != words_.end();
}

const std::string &Vocab::word(int id) const {
    if (id < 0 || id >= size()) {
        throw DataError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return words_[static_cast<std::size_t>(id)];
}

int Vocab::symbol(int index) const {
    if (index < 0 || index >= max_symbols()) {
        throw DataError("symbol index " + std::to_string(index) + " outside alphabet");
    }
    return symbol0_ + index;
}

int Vocab::symbol_index(int id) const { return (id >= symbol0_ && id < symbol0_ + 26) ? id - symbol0_ : -1; }

int Vocab::bucket(int quarter) const {
    if (quarter < 0 || quarter > 3) {
        throw DataError("time bucket " + std::to_string(quarter) + " outside [0, 3]");
    }
    return bucket0_ + quarter;
}

int Vocab::bucket_index(int id) const { return (id >= bucket0_ && id < bucket0_ + 4) ? id - bucket0_ : -1; }

void append_number(std::vector<int> &out, long value) {
    if (value < 0) {
        throw DataError("negative number in prompt: " + std::to_string(value));
    }
    const auto &v = Vocab::get();
    for (char c : std::to_string(value)) {
        out.push_back(v.digit(c - '0'));
    }
}

std::vector<int> tokenize(std::string_view text) {
    const auto &v = Vocab::get();
    std::vector<int> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (is_punct(c)) {
            out.push_back(v.id(std::string_view(&text[i], 1)));
            ++i;
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            out.push_back(v.digit(c - '0'));
            ++i;
        } else {
            std::size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && !is_punct(text[j]) &&
                   !std::isdigit(static_cast<unsigned char>(text[j]))) {
                ++j;
            }
            out.push_back(v.id(text.substr(i, j - i)));
            i = j;
        }
    }
    return out;
}

std::string detokenize(const std::vector<int> &ids) {
    const auto &v = Vocab::get();
    std::string out;
    int prev = -1;
    for (int id : ids) {
        const auto &w = v.word(id);
        const bool glue = out.empty() || (w.size() == 1 && is_punct(w[0])) || (v.is_digit(id) && prev >= 0 && v.is_digit(prev));
        if (!glue) {
            out.push_back(' ');
        }
        out += w;
        prev = id;
    }
    return out;
}

} // namespace vstream
