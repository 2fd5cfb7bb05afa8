#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace critgen::text {

// Lowercases ASCII and folds the handful of non-ASCII symbols that show up in
// eligibility text (≥ ≤ ² – —) onto ASCII spellings.
std::string normalize(std::string_view raw);

// Word-level segmentation of normalized text: runs of [a-z0-9] (a '.' between
// digits stays inside the run), the two-character operators ">=" and "<=",
// and every other non-space character (or UTF-8 code point) on its own.
// When `is_special` is given, "<name>" spans it accepts are kept whole.
std::vector<std::string> segment(
    std::string_view raw,
    const std::function<bool(std::string_view)>& is_special = {});

std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

// Parses a plain decimal token ("18", "7.5"). Anything else is nullopt.
std::optional<double> parse_number(std::string_view token);

// Shortest decimal spelling that round-trips ("18", "7.5", "0.125").
std::string format_number(double value);

}  // namespace critgen::text
