#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "jam/model.hpp"

namespace jam {

enum class TokenKind { text, image, special };

// Mixed-modal id space laid out as contiguous ranges
//   [text | image | <break> <eos> <bos> <query_mask> <mask_0> .. <mask_{K-1}>]
class Vocabulary {
public:
    // Full-scale reference sizes of the image tokenizer.
    static constexpr std::size_t kReferenceImageVocab = 8192;
    static constexpr std::size_t kReferenceImageLength = 1024;

    Vocabulary() : Vocabulary(64, 64, 3) {}
    Vocabulary(std::size_t n_text, std::size_t n_image, std::size_t n_mask_sentinels);

    std::size_t n_text() const { return n_text_; }
    std::size_t n_image() const { return n_image_; }
    std::size_t n_mask_sentinels() const { return n_masks_; }
    std::size_t n_special() const { return 4 + n_masks_; }
    std::size_t size() const { return n_text_ + n_image_ + n_special(); }

    TokenId text(std::size_t i) const;
    TokenId image(std::size_t i) const;
    TokenId break_id() const { return special_base() + 0; }
    TokenId eos() const { return special_base() + 1; }
    TokenId bos() const { return special_base() + 2; }
    TokenId query_mask() const { return special_base() + 3; }
    TokenId mask(std::size_t i) const;

    TokenKind kind(TokenId id) const;
    bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }
    bool is_text(TokenId id) const { return contains(id) && kind(id) == TokenKind::text; }
    bool is_image(TokenId id) const { return contains(id) && kind(id) == TokenKind::image; }
    bool is_special(TokenId id) const { return contains(id) && kind(id) == TokenKind::special; }
    bool is_mask(TokenId id) const;
    std::size_t text_index(TokenId id) const;
    std::size_t image_index(TokenId id) const;
    TokenId image_begin() const { return static_cast<TokenId>(n_text_); }
    TokenId image_end() const { return static_cast<TokenId>(n_text_ + n_image_); }

    // "t12", "i3", "<break>", "<mask_0>", ...
    std::string name(TokenId id) const;
    std::optional<TokenId> parse(std::string_view name) const;

    // Which parent's embedding row seeds each id of a shared table: text
    // ids come from the language model, everything else from the image-text
    // model.
    std::vector<Branch> embedding_sources() const;

    bool operator==(const Vocabulary&) const = default;

private:
    TokenId special_base() const { return static_cast<TokenId>(n_text_ + n_image_); }

    std::size_t n_text_;
    std::size_t n_image_;
    std::size_t n_masks_;
};

}  // namespace jam
