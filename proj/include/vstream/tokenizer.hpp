#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace vstream {

// Closed word-level vocabulary shared by the encoder, the reader and the
// synthetic data. Integers are spelled digit by digit.
class Vocab {
public:
    static const Vocab &get();

    int size() const { return static_cast<int>(words_.size()); }
    int id(std::string_view word) const; // throws DataError for unknown words
    bool contains(std::string_view word) const;
    const std::string &word(int id) const;

    int pad() const { return pad_; }
    int bos() const { return bos_; }
    int eos() const { return eos_; }
    int digit(int d) const { return digit0_ + d; }
    bool is_digit(int id) const { return id >= digit0_ && id < digit0_ + 10; }
    int symbol(int index) const; // 'A' + index
    int symbol_index(int id) const; // -1 when id is not a symbol
    int max_symbols() const { return 26; }
    int bucket(int quarter) const; // 0..3
    int bucket_index(int id) const;
    int nothing() const { return nothing_; }

private:
    Vocab();
    std::vector<std::string> words_;
    int pad_ = 0, bos_ = 0, eos_ = 0, digit0_ = 0, symbol0_ = 0, bucket0_ = 0, nothing_ = 0;
};

std::vector<int> tokenize(std::string_view text);
std::string detokenize(const std::vector<int> &ids);

// Appends the digit tokens of a non-negative integer.
void append_number(std::vector<int> &out, long value);

} // namespace vstream
