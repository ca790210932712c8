#include <exception>
#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"joint classification and lesion segmentation for chest CT"};
  app.require_subcommand(1);
  ctdx::cli::register_generate(app);
  ctdx::cli::register_train_cls(app);
  ctdx::cli::register_train_seg(app);
  ctdx::cli::register_eval(app);
  ctdx::cli::register_infer(app);
  ctdx::cli::register_explain(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
