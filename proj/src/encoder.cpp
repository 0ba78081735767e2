#include "platediff/encoder.hpp"

#include "platediff/errors.hpp"

namespace platediff {

std::string build_prompt(const std::string& item_name, Stage stage) {
  if (item_name.empty()) throw ValidationError("item_name", "must not be empty");
  if (stage == Stage::absolute)
    return "What is the weight of the " + item_name + " in this image?";
  return "What is the difference in weight of the " + item_name + " in these images?";
}

}  // namespace platediff
