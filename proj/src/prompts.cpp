#include "idtrace/prompts.hpp"

#include <cctype>
#include <cstdlib>

#include "idtrace/util.hpp"

namespace idtrace::prompts {

std::string PromptTemplate::render(const std::map<std::string, std::string>& vars) const {
  std::string out;
  out.reserve(text.size());
  size_t pos = 0;
  while (pos < text.size()) {
    const size_t open = text.find('{', pos);
    if (open == std::string::npos) {
      out.append(text, pos, std::string::npos);
      break;
    }
    out.append(text, pos, open - pos);
    const size_t close = text.find('}', open + 1);
    if (close == std::string::npos) {
      out.append(text, open, std::string::npos);
      break;
    }
    const std::string key = text.substr(open + 1, close - open - 1);
    auto it = vars.find(key);
    if (it != vars.end()) {
      out.append(it->second);
      pos = close + 1;
    } else {
      out.push_back('{');
      pos = open + 1;
    }
  }
  return out;
}

PromptLibrary PromptLibrary::load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw PromptError("prompt directory not found: " + dir.string());
  }
  PromptLibrary lib;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    lib.put(PromptTemplate{entry.path().stem().string(), read_text_file(entry.path())});
  }
  if (lib.size() == 0) throw PromptError("no prompt templates in " + dir.string());
  return lib;
}

const PromptTemplate& PromptLibrary::get(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw PromptError("unknown prompt template: " + name);
  return it->second;
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("IDTRACE_DATA_DIR"); env && *env) return env;
#ifdef IDTRACE_DEFAULT_DATA_DIR
  return IDTRACE_DEFAULT_DATA_DIR;
#else
  return "data";
#endif
}

}  // namespace idtrace::prompts
