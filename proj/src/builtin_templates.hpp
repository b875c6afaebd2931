#pragma once

#include <map>
#include <string>

namespace arcade::detail {

/// Generated at configure time from templates/*.txt.
const std::map<std::string, std::string>& builtin_template_texts();

}  // namespace arcade::detail
