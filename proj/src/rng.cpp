#include "ctcdro/rng.hpp"

#include <sstream>

#include "ctcdro/errors.hpp"

namespace ctcdro {

std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng deserialize_rng(const std::string& state) {
  std::istringstream is(state);
  Rng rng;
  is >> rng;
  if (is.fail()) throw DataError("malformed rng state");
  return rng;
}

}  // namespace ctcdro
