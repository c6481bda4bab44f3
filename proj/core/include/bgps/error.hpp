#pragma once

#include <stdexcept>
#include <string>

namespace bgps {

// Base of every error raised by the library. The CLI maps ConfigError to
// exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

#define BGPS_DEFINE_ERROR(name)                                                                    \
    class name : public Error {                                                                    \
      public:                                                                                      \
        using Error::Error;                                                                        \
    }

BGPS_DEFINE_ERROR(InvalidScore);
BGPS_DEFINE_ERROR(InvalidArgument);
BGPS_DEFINE_ERROR(ScorerUnavailable);
BGPS_DEFINE_ERROR(ContextOverflow);
BGPS_DEFINE_ERROR(UnknownAttribute);
BGPS_DEFINE_ERROR(UnknownToken);
BGPS_DEFINE_ERROR(OracleTooLarge);
BGPS_DEFINE_ERROR(UnknownFixture);
BGPS_DEFINE_ERROR(InvalidLexicon);

// sidecar wire errors
BGPS_DEFINE_ERROR(Unreachable);
BGPS_DEFINE_ERROR(ProtocolVersionMismatch);
BGPS_DEFINE_ERROR(UnknownCapability);
BGPS_DEFINE_ERROR(Timeout);

#undef BGPS_DEFINE_ERROR

class SchemaViolation : public Error {
  public:
    SchemaViolation(std::string field_path, const std::string & what)
        : Error("schema violation at " + field_path + ": " + what), field_path_(std::move(field_path)) {}

    const std::string & field_path() const noexcept { return field_path_; }

  private:
    std::string field_path_;
};

class ServerError : public Error {
  public:
    ServerError(int status, std::string server_message)
        : Error("sidecar returned " + std::to_string(status) + ": " + server_message),
          status_(status),
          server_message_(std::move(server_message)) {}

    int status() const noexcept { return status_; }
    const std::string & server_message() const noexcept { return server_message_; }

  private:
    int status_;
    std::string server_message_;
};

// Configuration problems carry the JSON path of the offending field.
class ConfigError : public Error {
  public:
    ConfigError(std::string field_path, const std::string & what)
        : Error(field_path.empty() ? what : field_path + ": " + what), field_path_(std::move(field_path)) {}

    const std::string & field_path() const noexcept { return field_path_; }

  private:
    std::string field_path_;
};

}  // namespace bgps
