#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "commands.hpp"
#include "config.hpp"

extern char** environ;

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::pair<std::string, std::string>> env;
  for (char** e = environ; *e != nullptr; ++e) {
    const std::string entry = *e;
    const auto eq = entry.find('=');
    if (eq != std::string::npos && entry.rfind(sqac::cli::kEnvPrefix, 0) == 0)
      env.emplace_back(entry.substr(0, eq), entry.substr(eq + 1));
  }
  return sqac::cli::run(args, env, std::cout, std::cerr);
}
