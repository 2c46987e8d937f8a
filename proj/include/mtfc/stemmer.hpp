#pragma once

#include <string>
#include <string_view>

namespace mtfc {

/// Porter stemmer. Words containing anything other than lowercase ASCII
/// letters are returned unchanged.
std::string porter_stem(std::string_view word);

}  // namespace mtfc
