#include "jam/vocab.hpp"

#include <charconv>

#include "jam/error.hpp"

namespace jam {

Vocabulary::Vocabulary(std::size_t n_text, std::size_t n_image, std::size_t n_mask_sentinels)
    : n_text_(n_text), n_image_(n_image), n_masks_(n_mask_sentinels) {
    if (n_text == 0 || n_image == 0) throw ConfigError("vocabulary: text and image ranges must be non-empty");
    if (n_mask_sentinels == 0) throw ConfigError("vocabulary: at least one mask sentinel is required");
}

TokenId Vocabulary::text(std::size_t i) const {
    if (i >= n_text_) throw DomainError("vocabulary: text index " + std::to_string(i) + " out of range");
    return static_cast<TokenId>(i);
}

TokenId Vocabulary::image(std::size_t i) const {
    if (i >= n_image_) throw DomainError("vocabulary: image index " + std::to_string(i) + " out of range");
    return static_cast<TokenId>(n_text_ + i);
}

TokenId Vocabulary::mask(std::size_t i) const {
    if (i >= n_masks_) throw DomainError("vocabulary: mask sentinel " + std::to_string(i) + " out of range");
    return special_base() + 4 + static_cast<TokenId>(i);
}

TokenKind Vocabulary::kind(TokenId id) const {
    if (!contains(id)) throw DomainError("vocabulary: token id " + std::to_string(id) + " out of range");
    const auto u = static_cast<std::size_t>(id);
    if (u < n_text_) return TokenKind::text;
    if (u < n_text_ + n_image_) return TokenKind::image;
    return TokenKind::special;
}

bool Vocabulary::is_mask(TokenId id) const { return id >= mask(0) && id < special_base() + static_cast<TokenId>(n_special()); }

std::size_t Vocabulary::text_index(TokenId id) const {
    if (!is_text(id)) throw DomainError("vocabulary: " + std::to_string(id) + " is not a text token");
    return static_cast<std::size_t>(id);
}

std::size_t Vocabulary::image_index(TokenId id) const {
    if (!is_image(id)) throw DomainError("vocabulary: " + std::to_string(id) + " is not an image token");
    return static_cast<std::size_t>(id) - n_text_;
}

std::string Vocabulary::name(TokenId id) const {
    switch (kind(id)) {
        case TokenKind::text: return "t" + std::to_string(id);
        case TokenKind::image: return "i" + std::to_string(image_index(id));
        case TokenKind::special: break;
    }
    if (id == break_id()) return "<break>";
    if (id == eos()) return "<eos>";
    if (id == bos()) return "<bos>";
    if (id == query_mask()) return "<query_mask>";
    return "<mask_" + std::to_string(id - mask(0)) + ">";
}

std::optional<TokenId> Vocabulary::parse(std::string_view name) const {
    auto number = [](std::string_view digits) -> std::optional<std::size_t> {
        std::size_t v = 0;
        if (digits.empty()) return std::nullopt;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
        if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
        return v;
    };
    if (name == "<break>") return break_id();
    if (name == "<eos>") return eos();
    if (name == "<bos>") return bos();
    if (name == "<query_mask>") return query_mask();
    if (name.starts_with("<mask_") && name.ends_with(">")) {
        auto n = number(name.substr(6, name.size() - 7));
        if (n && *n < n_masks_) return mask(*n);
        return std::nullopt;
    }
    if (name.size() > 1 && (name[0] == 't' || name[0] == 'i')) {
        auto n = number(name.substr(1));
        if (!n) return std::nullopt;
        if (name[0] == 't' && *n < n_text_) return text(*n);
        if (name[0] == 'i' && *n < n_image_) return image(*n);
    }
    return std::nullopt;
}

std::vector<Branch> Vocabulary::embedding_sources() const {
    std::vector<Branch> sources(size(), Branch::img);
    for (std::size_t i = 0; i < n_text_; ++i) sources[i] = Branch::llm;
    return sources;
}

}  // namespace jam
