#pragma once

#include <stdexcept>
#include <string>

namespace egoface {

/// Invalid run configuration; the message names the offending JSON path.
class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// A command needs an artifact that has not been produced yet.
class MissingArtifactError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// NaN/Inf or another unrecoverable numeric state.
class NumericError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

} // namespace egoface
