//! Named parameter groups, generic over storage (`Tensor`) or tape handle (`Var`).

/// Declares a struct whose fields all have type `T`, with name-aware
/// `map`/`try_map` and field enumeration.
#[macro_export]
macro_rules! param_struct {
    ($(#[$meta:meta])* $vis:vis struct $name:ident { $($(#[$fmeta:meta])* $field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        $vis struct $name<T> {
            $($(#[$fmeta])* pub $field: T,)*
        }

        impl<T> $name<T> {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> $name<U> {
                $name { $($field: f(stringify!($field), &self.$field),)* }
            }

            pub fn try_map<U, E>(
                &self,
                mut f: impl FnMut(&str, &T) -> ::std::result::Result<U, E>,
            ) -> ::std::result::Result<$name<U>, E> {
                Ok($name { $($field: f(stringify!($field), &self.$field)?,)* })
            }

            pub fn fields(&self) -> Vec<(String, &T)> {
                vec![$((stringify!($field).to_string(), &self.$field)),*]
            }

            pub fn fields_mut(&mut self) -> Vec<(String, &mut T)> {
                vec![$((stringify!($field).to_string(), &mut self.$field)),*]
            }
        }
    };
}
