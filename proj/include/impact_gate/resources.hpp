#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace impact_gate::resources {

// Files under resources/ compiled into the library, keyed by relative path.
std::optional<std::string_view> find(std::string_view name);

// Same as find() but throws Error(io_error) when the resource is missing.
std::string_view get(std::string_view name);

} // namespace impact_gate::resources
